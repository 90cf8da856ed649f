use std::time::Instant;

use geodet::runner::train_and_eval;
use geodet::synth::{generate_scene, SceneSpec};
use geodet::RunConfig;

#[test]
#[ignore]
fn overfit_probe() {
    let spec = SceneSpec {
        objects_min: 2,
        objects_max: 4,
        ..SceneSpec::default()
    };
    let scenes: Vec<_> = (0..10)
        .map(|i| {
            let s = SceneSpec {
                seed: spec.seed + i as u64,
                ..spec.clone()
            };
            let (cloud, ann) = generate_scene(&s).unwrap();
            (format!("scene_{i:03}"), cloud, ann)
        })
        .collect();
    let total_points: usize = scenes.iter().map(|s| s.1.len()).sum();
    println!("total points: {total_points}");

    for epochs in [50, 150, 500] {
        let config = RunConfig {
            epochs,
            ..RunConfig::default()
        };
        let start = Instant::now();
        let out = train_and_eval(scenes.clone(), &config).unwrap();
        let superpoints: usize = out.detections.scenes.iter().map(|s| s.detections.len()).sum();
        println!(
            "epochs {epochs}: {:.1}s  loss {:.4} -> {:.4}  mAP25 {:?}  mAP50 {:?}  (M total {superpoints})",
            start.elapsed().as_secs_f64(),
            out.train_report.initial_loss,
            out.train_report.final_loss,
            out.eval_report.map25,
            out.eval_report.map50,
        );
    }
}
