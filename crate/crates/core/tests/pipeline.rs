use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tuckerwatch::anomaly::user_scores;
use tuckerwatch::ingestion::{parse_log, preprocess, FeatureTensor, WindowSpec};
use tuckerwatch::pipeline::{self, decompose, PipelineConfig};
use tuckerwatch::synth::{generate, EventSpec, SynthConfig};
use tuckerwatch::Tensor3;

#[test]
fn inflated_user_ranks_first() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planted = 7 + seed as usize;
        let x = Tensor3::from_fn([40, 10, 200], |i, _, k| {
            let v = normal.sample(&mut rng);
            if i == planted && (60..110).contains(&k) {
                v + 10.0
            } else {
                v
            }
        });
        let ids: Vec<String> = (0..40).map(|i| format!("u{i:02}")).collect();
        let (ft, _) = preprocess(&FeatureTensor::new(x, ids).unwrap()).unwrap();
        let d = decompose(&ft, &PipelineConfig::default()).unwrap();
        let ranking = user_scores(&d.model, &ft.user_ids).unwrap();
        assert_eq!(ranking.entries[0].user_id, format!("u{planted:02}"), "seed {seed}");
    }
}

#[test]
fn csv_log_to_events() {
    let synth = SynthConfig {
        n_users: 40,
        window_hours: 240,
        burst_rate: 10.0,
        persistent_anomalous: vec![5],
        events: vec![EventSpec {
            start_hour: 100,
            end_hour: 129,
            affected_fraction: 0.15,
        }],
        seed: 17,
        ..Default::default()
    };
    let (log, truth) = generate(&synth).unwrap();
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    let parsed = parse_log(
        &csv[..],
        WindowSpec {
            start: Some(synth.window_start),
            hours: 240,
        },
    )
    .unwrap();
    assert_eq!(parsed, log);

    let cfg = PipelineConfig {
        window_hours: 240,
        ..Default::default()
    };
    let run = pipeline::run(&parsed, &cfg).unwrap();
    assert_eq!(run.features.tensor.dims(), [40, 10, 240]);
    let pos = run.ranking.position(&truth.anomalous_user_ids[0]).unwrap();
    assert!(pos < 7, "anomalous user at rank {pos}");
    let hit = run
        .events
        .windows
        .iter()
        .any(|w| w.start_hour <= 129 && w.end_hour >= 100);
    assert!(hit, "{:?}", run.events.windows);

    let again = pipeline::run(&parsed, &cfg).unwrap();
    assert_eq!(again.ranking, run.ranking);
    assert_eq!(again.events, run.events);
}
