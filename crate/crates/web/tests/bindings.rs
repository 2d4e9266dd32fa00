use scate_web::{episode_json, field_json, plan_json};

#[test]
fn heatmap_is_negative_inside_the_obstacle() {
    let v = field_json(1.0, 3.0, 0.3).unwrap();
    let (nx, ny) = (v["nx"].as_u64().unwrap() as usize, v["ny"].as_u64().unwrap() as usize);
    let data = v["data"].as_array().unwrap();
    assert_eq!(data.len(), nx * ny);
    let cell = v["cell"].as_f64().unwrap();
    let origin = v["origin"].as_array().unwrap();
    let ix = ((1.0 - origin[0].as_f64().unwrap()) / cell).round() as usize;
    let iy = ((3.0 - origin[1].as_f64().unwrap()) / cell).round() as usize;
    assert!(data[iy * nx + ix].as_f64().unwrap() < 0.0);
    assert!(data[0].as_f64().unwrap() > 0.0);
}

#[test]
fn plan_spans_start_to_goal_around_the_obstacle() {
    let v = plan_json(2.0, 2.0, 0.25).unwrap();
    let states = v["states"].as_array().unwrap();
    assert_eq!(states.len(), 61);
    assert_eq!(v["controls"].as_array().unwrap().len(), 60);
    let last = &states[60];
    assert!((last[0].as_f64().unwrap() - 3.5).abs() < 1e-3);
    for s in states {
        let d = (s[0].as_f64().unwrap() - 2.0).hypot(s[2].as_f64().unwrap() - 2.0);
        assert!(d > 0.25 + 0.35, "{d}");
    }
}

#[test]
fn obstacle_outside_the_arena_is_rejected() {
    assert!(plan_json(9.0, 2.0, 0.25).is_err());
}

#[test]
fn episode_trace_and_plans() {
    let v = episode_json("predictive", "predictive", 1).unwrap();
    assert_eq!(v["summary"]["collision_free"], true);
    assert_eq!(v["trace"].as_array().unwrap().len(), 601);
    assert_eq!(v["plans"].as_array().unwrap().len(), 61);
    assert!(episode_json("predictive", "sideways", 1).is_err());
}
