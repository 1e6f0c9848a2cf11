use mergesim_core::barriers;
use mergesim_core::config::ScenarioConfig;
use mergesim_core::sim::Simulation;
use mergesim_core::vehicle::{RoadId, VehicleId, VehicleRecord, Zone};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[test]
fn probe_v2_vs_v11() {
    let mut cfg = ScenarioConfig::default();
    cfg.arrival_rate_per_road = 0.0;
    cfg.n_vehicles = 15;
    cfg.max_sim_time = 600.0;
    let mut vehicles = Vec::new();
    for i in 0..10 {
        vehicles.push(VehicleRecord::new_cav(
            VehicleId(i + 1),
            RoadId::Main,
            290.0 - 30.0 * i as f64,
            20.0,
            0.0,
        ));
    }
    for i in 0..5 {
        vehicles.push(VehicleRecord::new_cav(
            VehicleId(i + 11),
            RoadId::Side,
            275.0 - 50.0 * i as f64,
            20.0,
            0.0,
        ));
    }
    let mut sim = Simulation::with_vehicles(cfg.clone(), vehicles).unwrap();

    let v2 = VehicleId(2);
    let v11 = VehicleId(11);
    for step in 0..200 {
        let t = step as f64 * cfg.t_d;
        {
            let table = sim.table();
            let a = table.get(v2);
            let b = table.get(v11);
            if let (Some(a), Some(b)) = (a, b) {
                let margin = barriers::merge_ahead_value(&a.state, &b.state, &cfg);
                if a.state.x > 250.0 || margin < 5.0 {
                    println!(
                        "t={:5.1} v2[{:?} x={:8.3} v={:6.3}] v11[{:?} x={:8.3} v={:6.3}] b4={:8.4}",
                        t, a.zone, a.state.x, a.state.v, b.zone, b.state.x, b.state.v, margin
                    );
                }
            } else {
                println!("t={t:5.1} v2 or v11 retired");
                break;
            }
            if a.map_or(true, |r| r.zone == Zone::Exited) {
                println!("t={t:5.1} v2 exited");
                break;
            }
        }
        let r = catch_unwind(AssertUnwindSafe(|| sim.tick()));
        if let Err(e) = r {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("PANIC at t={t:.1}: {msg}");
            break;
        }
    }
}
