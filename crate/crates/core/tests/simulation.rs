use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scate::dynamics::{design_gain, planar_model, ControlVec, LtiModel, StateVec};
use scate::graph::wrap_angle;
use scate::planner::NoiseConfig;
use scate::sim::{clearance, clearance_profile, sample_measurements, ObstacleScript};
use scate::{run_episode, PlanningMode, Scenario};

fn quick(preset: &str, horizon: usize) -> Scenario {
    let mut s = Scenario::preset(preset).unwrap();
    s.planner.horizon = horizon;
    s
}

#[test]
fn same_seed_same_log() {
    let s = quick("reactive", 20);
    let a = run_episode(&s).unwrap();
    let b = run_episode(&s).unwrap();
    assert_eq!(a.csv_string().unwrap(), b.csv_string().unwrap());
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.estimates, b.estimates);
    let mut sa = a.sidecar();
    let mut sb = b.sidecar();
    sa.as_object_mut().unwrap().remove("timing");
    sb.as_object_mut().unwrap().remove("timing");
    assert_eq!(sa, sb);
}

#[test]
fn modes_agree_when_the_obstacle_never_matters() {
    let mut s = quick("predictive", 20);
    s.obstacle = Some(ObstacleScript::fixed([3.8, 0.2], 0.1));
    s.sim.noise_scale = 0.0;
    let predictive = run_episode(&s).unwrap();
    s.mode = PlanningMode::Reactive;
    let reactive = run_episode(&s).unwrap();
    assert_eq!(predictive.csv_string().unwrap(), reactive.csv_string().unwrap());
    assert!(reactive.steps[..20].iter().enumerate().all(|(i, st)| st.replacements == 20 - i));
    assert!(predictive.steps.iter().all(|st| st.replacements == 0));
}

#[test]
fn bearing_noise_statistics() {
    let noise = NoiseConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = StateVec::from([1.0, 0.0, 1.0, 0.0, 0.3, 0.0]);
    let l = [2.0, 3.0];
    let truth = (l[1] - x[2]).atan2(l[0] - x[0]);
    let errs: Vec<f64> = (0..10_000)
        .map(|_| {
            let b = sample_measurements(0, &x, Some(l), &noise, 1.0, &mut rng).unwrap();
            wrap_angle(b.obstacle.unwrap().bearing - truth)
        })
        .collect();
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (errs.len() - 1) as f64).sqrt();
    assert!((std / noise.bearing - 1.0).abs() < 0.1, "{std}");
}

#[test]
fn seeded_bundles_repeat() {
    let noise = NoiseConfig::default();
    let x = StateVec::from([1.0, 0.2, 1.0, 0.0, 0.3, 0.0]);
    let draw = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        sample_measurements(3, &x, Some([2.0, 2.0]), &noise, 1.0, &mut rng).unwrap()
    };
    assert_eq!(draw(), draw());
}

#[test]
fn static_obstacle_is_avoided_and_goal_reached() {
    let s = Scenario::preset("static").unwrap();
    let log = run_episode(&s).unwrap();
    assert!(log.summary.min_clearance > 0.0);
    assert!(log.summary.goal_position_error < 0.1);
    assert!(log.summary.success());
    let profile = clearance_profile(&log, &s);
    assert_eq!(profile.len(), log.ticks.len());
    for (p, t) in profile.iter().zip(&log.ticks) {
        assert!((p - t.clearance).abs() < 1e-12);
    }
}

#[test]
fn reactive_run_swerves_off_the_diagonal() {
    let s = Scenario::preset("reactive").unwrap();
    let log = run_episode(&s).unwrap();
    assert!(log.summary.collision_free);
    // perpendicular distance from the start-goal diagonal
    let off = log
        .ticks
        .iter()
        .map(|r| ((r.truth[0] - 0.5) - (r.truth[2] - 0.5)).abs() / 2f64.sqrt())
        .fold(0.0, f64::max);
    assert!(off > 0.3, "{off}");
}

#[test]
fn no_teleportation() {
    let s = quick("reactive", 30);
    let log = run_episode(&s).unwrap();
    let dt = 1.0 / s.sim.plant_rate;
    let a_max = s.robot.limits.upper[0].max(s.robot.limits.upper[1]) / s.robot.mass;
    let v_max = log.ticks.iter().map(|r| r.truth[1].hypot(r.truth[3])).fold(0.0, f64::max) + a_max * dt;
    for w in log.ticks.windows(2) {
        let step = (w[1].truth[0] - w[0].truth[0]).hypot(w[1].truth[2] - w[0].truth[2]);
        assert!(step <= v_max * dt * 1.000001);
    }
    assert!(v_max < a_max * s.duration());
}

#[test]
fn tracking_error_decays() {
    let c = planar_model(10.0, 1.0).unwrap();
    let gain = design_gain(&c.a, &c.b, &Default::default()).unwrap();
    let plant = LtiModel::new(c, 0.01).unwrap();
    let u_ref = ControlVec::from([0.2, -0.1, 0.01]);
    let mut x_ref = StateVec::from([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    let mut x = StateVec::from([1.3, 0.1, 0.8, 0.0, 0.4, 0.0]);
    let mut norms = Vec::new();
    for tick in 0..3000 {
        if tick % 100 == 0 {
            norms.push((x - x_ref).norm());
        }
        let u = u_ref + gain.apply(&(x - x_ref));
        x = plant.step(&x, &u);
        x_ref = plant.step(&x_ref, &u_ref);
    }
    for w in norms[3..].windows(2) {
        assert!(w[1] < w[0], "{norms:?}");
    }
    assert!(norms.last().unwrap() < &1e-6);
}

#[test]
fn far_clearance_is_separation_minus_radii() {
    let spheres = scate::sdf::SphereModel::single(0.35);
    let x = StateVec::from([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!((clearance(&x, &spheres, [3.0, 4.0], 0.25) - (5.0 - 0.6)).abs() < 1e-12);
}

#[test]
fn csv_has_one_row_per_tick() {
    let log = run_episode(&quick("static", 10)).unwrap();
    let text = log.csv_string().unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 20);
    assert_eq!(lines.count(), log.ticks.len());
    assert_eq!(log.ticks.len(), 10 * 100 + 1);
    let json = log.sidecar();
    assert!(json["timing"]["step_ms"].is_array());
    assert!(json["steps"][0].get("iterations").is_some());
}
