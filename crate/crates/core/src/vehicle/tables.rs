//! 1-D and 2-D lookup tables with border clamping. Out-of-range lookups are
//! clamped, never extrapolated; callers that care count the clamp events.

use super::VehicleError;

fn check_axis(name: &str, axis: &[f64]) -> Result<(), VehicleError> {
    if axis.len() < 2 {
        return Err(VehicleError::BadValue(format!(
            "axis of `{name}` needs at least 2 points"
        )));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) || axis.iter().any(|v| !v.is_finite()) {
        return Err(VehicleError::NonMonotoneAxis(name.to_string()));
    }
    Ok(())
}

/// Returns (lower index, interpolation fraction, clamped?).
fn locate(axis: &[f64], x: f64) -> (usize, f64, bool) {
    let n = axis.len();
    if x <= axis[0] {
        return (0, 0.0, x < axis[0]);
    }
    if x >= axis[n - 1] {
        return (n - 2, 1.0, x > axis[n - 1]);
    }
    let mut i = match axis.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    if i >= n - 1 {
        i = n - 2;
    }
    let frac = (x - axis[i]) / (axis[i + 1] - axis[i]);
    (i, frac, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    axis: Vec<f64>,
    values: Vec<f64>,
}

impl Curve {
    pub fn new(name: &str, axis: Vec<f64>, values: Vec<f64>) -> Result<Self, VehicleError> {
        check_axis(name, &axis)?;
        if values.len() != axis.len() {
            return Err(VehicleError::BadValue(format!(
                "`{name}`: {} values for {} axis points",
                values.len(),
                axis.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VehicleError::BadValue(format!("`{name}`: non-finite value")));
        }
        Ok(Curve { axis, values })
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_counted(x, &mut 0)
    }

    pub fn eval_counted(&self, x: f64, clamps: &mut u64) -> f64 {
        let (i, f, clamped) = locate(&self.axis, x);
        if clamped {
            *clamps += 1;
        }
        self.values[i] + f * (self.values[i + 1] - self.values[i])
    }
}

/// Rectangular bilinear table: one row of `y_axis.len()` values per `x_axis` point.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    x_axis: Vec<f64>,
    y_axis: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl Grid {
    pub fn new(
        name: &str,
        x_axis: Vec<f64>,
        y_axis: Vec<f64>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, VehicleError> {
        check_axis(name, &x_axis)?;
        check_axis(name, &y_axis)?;
        if rows.len() != x_axis.len() {
            return Err(VehicleError::BadValue(format!(
                "`{name}`: {} rows for {} x-axis points",
                rows.len(),
                x_axis.len()
            )));
        }
        for row in &rows {
            if row.len() != y_axis.len() {
                return Err(VehicleError::BadValue(format!(
                    "`{name}`: ragged row ({} values for {} y-axis points)",
                    row.len(),
                    y_axis.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(VehicleError::BadValue(format!("`{name}`: non-finite value")));
            }
        }
        Ok(Grid { x_axis, y_axis, rows })
    }

    pub fn x_axis(&self) -> &[f64] {
        &self.x_axis
    }

    pub fn y_axis(&self) -> &[f64] {
        &self.y_axis
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.eval_counted(x, y, &mut 0)
    }

    pub fn eval_counted(&self, x: f64, y: f64, clamps: &mut u64) -> f64 {
        let (i, fx, cx) = locate(&self.x_axis, x);
        let (j, fy, cy) = locate(&self.y_axis, y);
        if cx || cy {
            *clamps += 1;
        }
        let v00 = self.rows[i][j];
        let v01 = self.rows[i][j + 1];
        let v10 = self.rows[i + 1][j];
        let v11 = self.rows[i + 1][j + 1];
        let a = v00 + fy * (v01 - v00);
        let b = v10 + fy * (v11 - v10);
        a + fx * (b - a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_interp_and_clamp() {
        let c = Curve::new("c", vec![0.0, 1.0, 2.0], vec![0.0, 10.0, 40.0]).unwrap();
        assert_eq!(c.eval(0.5), 5.0);
        assert_eq!(c.eval(1.5), 25.0);
        let mut n = 0;
        assert_eq!(c.eval_counted(-1.0, &mut n), 0.0);
        assert_eq!(c.eval_counted(5.0, &mut n), 40.0);
        assert_eq!(n, 2);
    }

    #[test]
    fn curve_rejects_decreasing_axis() {
        assert!(matches!(
            Curve::new("c", vec![0.0, 2.0, 1.0], vec![0.0, 1.0, 2.0]),
            Err(VehicleError::NonMonotoneAxis(_))
        ));
    }

    #[test]
    fn grid_bilinear() {
        let g = Grid::new(
            "g",
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0], vec![2.0, 3.0]],
        )
        .unwrap();
        assert_eq!(g.eval(0.0, 0.0), 0.0);
        assert_eq!(g.eval(1.0, 1.0), 3.0);
        assert_eq!(g.eval(0.5, 0.5), 1.5);
    }

    #[test]
    fn grid_rejects_ragged_rows() {
        assert!(Grid::new(
            "g",
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0], vec![2.0]],
        )
        .is_err());
    }
}
