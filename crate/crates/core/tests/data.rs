use std::io::Write;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use powergp::data::{
    load_scada_csv, preprocess, split_three, synth_generate, CleaningRules, ScadaRecord, Split, SynthConfig,
};
use powergp::Error;

#[test]
fn draws_match_the_generating_mean() {
    let cfg = SynthConfig::default();
    for x in [0.3, 0.42, 0.6] {
        let truth = cfg.truth_at(x);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| cfg.draw(&truth, &mut rng).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = truth.mean * (1.0 - truth.mean) / (truth.alpha + truth.beta + 1.0);
        let se = (var / n as f64).sqrt();
        assert!((mean - truth.mean).abs() < 3.0 * se, "x = {x}: sample mean {mean} vs {} ± {se}", truth.mean);
    }
}

#[test]
fn symmetric_shapes_at_half_power() {
    let cfg = SynthConfig { concentration_peak: 10.0, concentration_floor: 10.0, ..SynthConfig::default() };
    let mid = 0.5 * (cfg.cut_in + cfg.rated_onset);
    let truth = cfg.truth_at(mid);
    assert!((truth.mean - 0.5).abs() < 1e-12);
    assert!((truth.alpha - 5.0).abs() < 1e-10 && (truth.beta - 5.0).abs() < 1e-10);
}

/// Empirical variance of the residuals `y − m(x)` among points whose true
/// mean falls in `[lo, hi)`.
fn residual_variance(cfg: &SynthConfig, lo: f64, hi: f64) -> f64 {
    let data = synth_generate(cfg).unwrap();
    let truth = data.ground_truth.as_ref().unwrap();
    let r: Vec<f64> = data
        .records
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.mean >= lo && t.mean < hi)
        .map(|(rec, t)| rec.power - t.mean)
        .collect();
    assert!(r.len() > 100, "only {} points in [{lo}, {hi})", r.len());
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

#[test]
fn noise_peaks_mid_curve() {
    for seed in [7, 8, 9] {
        let cfg = SynthConfig { seed, ..SynthConfig::default() };
        let middle = residual_variance(&cfg, 0.45, 0.55);
        let low = residual_variance(&cfg, 0.0, 0.1);
        let high = residual_variance(&cfg, 0.9, 1.0);
        assert!(middle > low && middle > high, "seed {seed}: {low} / {middle} / {high}");
    }
}

fn write(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn header_only_file_has_no_records() {
    let f = write("wind_speed,power\n");
    let ingested = load_scada_csv(f.path()).unwrap();
    assert!(ingested.records.is_empty());
    assert_eq!(ingested.dropped, 0);
    assert!(matches!(
        preprocess(&ingested.records, &CleaningRules::default()),
        Err(Error::InsufficientData { available: 0, .. })
    ));
}

#[test]
fn well_formed_file_loads_in_order() {
    let mut text = String::from("Time,Power,Wind_Speed\n");
    for i in 0..20 {
        text += &format!("t{i},{},{}\n", i as f64 / 20.0, 3.0 + i as f64);
    }
    let f = write(&text);
    let ingested = load_scada_csv(f.path()).unwrap();
    assert_eq!(ingested.dropped, 0);
    assert_eq!(ingested.records.len(), 20);
    assert_eq!(ingested.records[3], ScadaRecord::new(6.0, 0.15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(n in 12usize..300, seed in any::<u64>()) {
        let records: Vec<ScadaRecord> = (0..n).map(|i| ScadaRecord::new(i as f64, (i % 7) as f64 / 7.0)).collect();
        let data = preprocess(&records, &CleaningRules::default()).unwrap();
        let split = split_three(&data, seed).unwrap();
        prop_assert_eq!(split.split.len(), split.len());
        let (a, b, c) = split.split_sizes();
        prop_assert_eq!(a + b + c, split.len());
        prop_assert!(a.max(b).max(c) - a.min(b).min(c) <= 1);
        let mut seen: Vec<f64> = [Split::Train, Split::Test, Split::Validation]
            .into_iter()
            .flat_map(|s| split.part(s).unwrap().0)
            .collect();
        seen.sort_by(f64::total_cmp);
        let mut all = split.inputs();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, all);
        prop_assert_eq!(split_three(&data, seed).unwrap(), split);
    }

    #[test]
    fn synthetic_targets_stay_in_the_unit_interval(seed in any::<u64>()) {
        let data = synth_generate(&SynthConfig { n: 200, seed, ..SynthConfig::default() }).unwrap();
        for r in &data.records {
            prop_assert!(r.power > 0.0 && r.power < 1.0);
            prop_assert!((0.0..1.0).contains(&r.wind_speed));
        }
    }
}
