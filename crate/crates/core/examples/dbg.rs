use ecosim_core::planner::*;
use ecosim_core::vehicle::*;

fn main() {
    let cfg = VehicleConfig::shipped_default();
    let v_ref = 13.4_f64;
    let lambda = calibrate_lambda(cfg, v_ref);
    println!("lambda = {lambda:.6}");
    let mut v = v_ref;
    while v >= 11.3 {
        let f = quasi_static_fuel_gps(cfg, v, 0.0, 0.0);
        println!("v={v:5.2} gear={} f={f:.5} c={:.7}", top_feasible_gear(cfg, v), (f+lambda)/v);
        v -= 0.25;
    }
}
