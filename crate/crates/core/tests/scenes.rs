use truncdiff::eval::metrics::{collision_free, drivable_compliant, mini_pdm};
use truncdiff::scene::{decode_dataset, encode_dataset, generate_dataset, RouteIntent};

#[test]
fn hard_demonstrations_pass_the_evaluator() {
    let (scenes, failures) = generate_dataset(1000, 0.7, 2024, None).unwrap();
    assert_eq!(scenes.len(), 1000);
    assert_eq!(failures, 0);
    let bad: Vec<usize> = scenes
        .iter()
        .enumerate()
        .filter(|(_, s)| !(collision_free(s, &s.gt_trajectory) && drivable_compliant(s, &s.gt_trajectory)))
        .map(|(i, _)| i)
        .collect();
    assert!(bad.is_empty(), "scenes {bad:?} fail their own demonstration");
    for s in scenes.iter().take(50) {
        let score = mini_pdm(s, &s.gt_trajectory).unwrap();
        assert_eq!((score.nc, score.dac), (1.0, 1.0));
    }
}

#[test]
fn every_intent_appears_and_round_trips() {
    let (scenes, _) = generate_dataset(200, 0.5, 31, None).unwrap();
    for code in 0..5 {
        let intent = RouteIntent::from_code(code).unwrap();
        assert!(scenes.iter().any(|s| s.intent == intent), "{intent} missing");
    }
    assert_eq!(decode_dataset(&encode_dataset(&scenes)).unwrap(), scenes);
}

#[test]
fn fixed_intent_dataset() {
    let (scenes, _) = generate_dataset(20, 0.3, 4, Some(RouteIntent::RightTurn)).unwrap();
    assert!(scenes.iter().all(|s| s.intent == RouteIntent::RightTurn));
}
