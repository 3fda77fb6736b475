use serde_json::Value;
use trunkline_web::Demo;

fn report(d: &Demo, theta: f64) -> Value {
    serde_json::from_str(&d.endpoint_report(theta).unwrap()).unwrap()
}

#[test]
fn demo_detects_calls_and_responds_to_the_threshold() {
    let d = Demo::build(7, 10.0).unwrap();
    assert_eq!(d.spectrogram_bins(), 64);
    assert_eq!(d.spectrogram().len(), d.spectrogram_frames() * 64);
    assert!(d.spectrogram_frames() > 2900);
    let probs = d.probabilities();
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));

    let curves: Value = serde_json::from_str(&d.curves_report().unwrap()).unwrap();
    assert!(curves["auc"].as_f64().unwrap() > 0.8);
    assert!(curves["roc"].as_array().unwrap().len() > 2);

    // raising the threshold can only shrink the positive frames
    let mut last = f64::INFINITY;
    for theta in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let r = report(&d, theta);
        let cov = r["coverage"].as_f64().unwrap();
        assert!(cov <= last + 1e-12, "coverage rose at {theta}");
        last = cov;
        for s in r["segments"].as_array().unwrap() {
            assert!(s["start"].as_f64().unwrap() < s["end"].as_f64().unwrap());
        }
    }
    let ann: Value = serde_json::from_str(&d.annotations()).unwrap();
    assert!(!ann.as_array().unwrap().is_empty());
}

#[test]
fn demo_is_deterministic_per_seed() {
    let a = Demo::build(3, 10.0).unwrap();
    let b = Demo::build(3, 10.0).unwrap();
    assert_eq!(a.probabilities(), b.probabilities());
    assert_eq!(a.annotations(), b.annotations());
}
