use super::*;
use proptest::prelude::*;
use rand::Rng;
use std::path::Path;

fn noise(len: usize, seed: u64, rate: u32) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip::new((0..len).map(|_| rng.random_range(-0.5..0.5)).collect(), rate).unwrap()
}

fn tone(freq: f64, len: usize, rate: u32) -> AudioClip {
    AudioClip::new(
        (0..len)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin())
            .collect(),
        rate,
    )
    .unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn normalize_rms_cases() {
    let c = noise(1_000, 1, 16_000);
    let at = normalize_rms(&c, c.rms()).unwrap();
    assert_eq!(at, c);
    let tenth = AudioClip::new(vec![0.1, -0.1, 0.1, -0.1], 16_000).unwrap();
    let doubled = normalize_rms(&tenth, 0.2).unwrap();
    assert_eq!(doubled.samples, vec![0.2, -0.2, 0.2, -0.2]);
    let n = normalize_rms(&c, 0.37).unwrap();
    assert!((n.rms() - 0.37).abs() < 1e-9 * 0.37);
    assert!(matches!(
        normalize_rms(&AudioClip::silence(10, 16_000), 0.1),
        Err(MixerError::SilentInput(_))
    ));
    assert!(normalize_rms(&c, 0.0).is_err());
}

#[test]
fn mixture_is_exact_sum_of_sources() {
    let out = mix_clips(
        &tone(440.0, 8_000, 16_000),
        &noise(8_000, 2, 16_000),
        0.0,
        16_000,
        0.5,
        3,
    )
    .unwrap();
    assert_eq!(out.sources.len(), 2);
    assert_eq!(out.mixture.len(), 8_000);
    for i in 0..out.mixture.len() {
        let sum = out.sources[0].samples[i] + out.sources[1].samples[i];
        assert!((out.mixture.samples[i] - sum).abs() <= 1e-12);
    }
}

#[test]
fn snr_is_realised_in_stored_sources() {
    for snr in [-5.0, -2.5, 0.0, 3.0, 5.0] {
        let out = mix_clips(
            &tone(300.0, 16_000, 16_000),
            &noise(16_000, 7, 16_000),
            snr,
            16_000,
            1.0,
            1,
        )
        .unwrap();
        let measured = 20.0 * (rms(&out.sources[0].samples) / rms(&out.sources[1].samples)).log10();
        assert!((measured - snr).abs() < 0.01, "snr {snr}: measured {measured}");
    }
}

#[test]
fn high_snr_mixture_is_the_foreground() {
    let out = mix_clips(
        &tone(500.0, 8_000, 16_000),
        &noise(8_000, 5, 16_000),
        60.0,
        16_000,
        0.5,
        0,
    )
    .unwrap();
    let diff: Vec<f64> = out
        .mixture
        .samples
        .iter()
        .zip(&out.sources[0].samples)
        .map(|(a, b)| a - b)
        .collect();
    // The residual is the background, 60 dB down.
    let ratio = rms(&diff) / rms(&out.sources[0].samples);
    assert!((ratio - 1e-3).abs() < 5e-5, "{ratio}");
}

#[test]
fn loud_mixtures_are_rescaled_together() {
    // Crest-heavy foreground: a sparse impulse train normalised to RMS 0.1
    // peaks far above 1.
    let mut spikes = vec![0.0; 4_000];
    spikes[100] = 1.0;
    spikes[2_100] = -1.0;
    let fg = AudioClip::new(spikes, 8_000).unwrap();
    let out = mix_clips(&fg, &noise(4_000, 1, 8_000), 0.0, 8_000, 0.5, 0).unwrap();
    assert!(out.rescale < 1.0);
    assert!(out.mixture.peak() <= PEAK_LIMIT + 1.0 / 32_768.0);
    let measured = 20.0 * (rms(&out.sources[0].samples) / rms(&out.sources[1].samples)).log10();
    assert!(measured.abs() < 0.01);
}

#[test]
fn short_sources_are_looped_and_long_ones_excerpted() {
    let short = tone(250.0, 1_000, 8_000);
    let out = mix_clips(&short, &noise(40_000, 3, 8_000), 0.0, 8_000, 1.0, 9).unwrap();
    let fg = &out.sources[0].samples;
    assert_eq!(fg.len(), 8_000);
    // Period of the loop is the original length.
    for i in 0..7_000 {
        assert_eq!(fg[i], fg[i + 1_000]);
    }
}

#[test]
fn mixing_resamples_to_target_rate() {
    let out = mix_clips(
        &tone(440.0, 44_100, 44_100),
        &noise(22_050, 1, 22_050),
        0.0,
        16_000,
        0.5,
        0,
    )
    .unwrap();
    assert_eq!(out.mixture.sample_rate, 16_000);
    assert_eq!(out.mixture.len(), 8_000);
}

#[test]
fn mix_rejects_bad_input() {
    let c = noise(100, 1, 8_000);
    assert!(mix_clips(&c, &c, 0.0, 8_000, 0.0, 0).is_err());
    assert!(mix_clips(&c, &c, f64::NAN, 8_000, 1.0, 0).is_err());
    assert!(mix_clips(&c, &AudioClip::silence(100, 8_000), 0.0, 8_000, 0.01, 0).is_err());
    let spec = MixSpec {
        foreground_path: "/nonexistent/a.wav".into(),
        background_path: "/nonexistent/b.wav".into(),
        snr_db: 0.0,
        target_rate: 8_000,
        duration_s: 1.0,
        seed: 0,
    };
    let err = mix(&spec).unwrap_err();
    assert!(err.is_io());
}

fn write_fixture(dir: &Path, name: &str, clip: &AudioClip) {
    dsp::write_wav(dir.join(name), clip).unwrap();
}

fn fixture_dirs(n_fg: usize, n_bg: usize) -> tempfile::TempDir {
    let root = tempfile::tempdir().unwrap();
    let fg = root.path().join("fg");
    let bg = root.path().join("bg");
    std::fs::create_dir_all(&fg).unwrap();
    std::fs::create_dir_all(&bg).unwrap();
    for i in 0..n_fg {
        write_fixture(
            &fg,
            &format!("violin_{i:02}.wav"),
            &tone(300.0 + 100.0 * i as f64, 4_000, 8_000),
        );
    }
    for i in 0..n_bg {
        write_fixture(&bg, &format!("ocean-waves-{i}.wav"), &noise(6_000, i as u64, 8_000));
    }
    root
}

fn small_config(seed: u64) -> DatasetConfig {
    DatasetConfig {
        seed,
        target_rate: 8_000,
        duration_s: 0.25,
        ..DatasetConfig::default()
    }
}

#[test]
fn one_by_one_gives_one_entry() {
    let root = fixture_dirs(1, 1);
    let out = root.path().join("out");
    let m = build_dataset(&root.path().join("fg"), &root.path().join("bg"), &out, &small_config(0)).unwrap();
    assert_eq!(m.entries.len(), 1);
    let e = &m.entries[0];
    assert_eq!(e.id, "mix_00000");
    assert_eq!(e.source_paths.len(), 2);
    assert_eq!(e.query_texts, vec!["violin".to_string(), "ocean waves".to_string()]);
    assert!((-5.0..5.0).contains(&e.snr_db));
    m.validate(&out).unwrap();
    let (mix, sources) = e.load_audio(&out).unwrap();
    for i in 0..mix.len() {
        assert_eq!(mix.samples[i], sources[0].samples[i] + sources[1].samples[i]);
    }
}

#[test]
fn exhaustive_pairing_counts_and_unique_ids() {
    let root = fixture_dirs(3, 2);
    let out = root.path().join("out");
    let m = build_dataset(&root.path().join("fg"), &root.path().join("bg"), &out, &small_config(1)).unwrap();
    assert_eq!(m.entries.len(), 6);
    let ids: std::collections::HashSet<_> = m.entries.iter().map(|e| e.id.clone()).collect();
    assert_eq!(ids.len(), 6);
    let reread = MixtureManifest::read(out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(reread, m);
    assert!(m.entries.iter().all(|e| e.split_tag == "train" || e.split_tag == "val"));
    // No temporary files left behind.
    let leftovers = std::fs::read_dir(out.join("audio"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().to_string_lossy().ends_with(".tmp"))
        .count();
    assert_eq!(leftovers, 0);
}

#[test]
fn random_pairing_draws_requested_count() {
    let root = fixture_dirs(2, 2);
    let config = DatasetConfig {
        pairing: Pairing::Random { count: 5 },
        ..small_config(4)
    };
    let m = build_dataset(
        &root.path().join("fg"),
        &root.path().join("bg"),
        &root.path().join("o"),
        &config,
    )
    .unwrap();
    assert_eq!(m.entries.len(), 5);
}

#[test]
fn same_seed_reproduces_bytes() {
    let root = fixture_dirs(2, 2);
    let (fg, bg) = (root.path().join("fg"), root.path().join("bg"));
    let a = root.path().join("a");
    let b = root.path().join("b");
    build_dataset(&fg, &bg, &a, &small_config(7)).unwrap();
    build_dataset(&fg, &bg, &b, &small_config(7)).unwrap();
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(&a, MANIFEST_FILE), read(&b, MANIFEST_FILE));
    assert_eq!(read(&a, "audio/mix_00003.wav"), read(&b, "audio/mix_00003.wav"));
    let c = root.path().join("c");
    build_dataset(&fg, &bg, &c, &small_config(8)).unwrap();
    assert_ne!(read(&a, MANIFEST_FILE), read(&c, MANIFEST_FILE));
}

#[test]
fn sidecar_text_overrides_stem() {
    let root = fixture_dirs(1, 1);
    std::fs::write(root.path().join("fg/violin_00.txt"), "  a solo violin\n").unwrap();
    assert_eq!(query_text_for(&root.path().join("fg/violin_00.wav")), "a solo violin");
    assert_eq!(query_text_for(Path::new("x/dog_bark_12.wav")), "dog bark");
    assert_eq!(query_text_for(Path::new("x/0042.wav")), "0042");
}

#[test]
fn empty_or_missing_directories_are_errors() {
    let root = fixture_dirs(1, 0);
    let err = build_dataset(
        &root.path().join("fg"),
        &root.path().join("bg"),
        &root.path().join("o"),
        &small_config(0),
    )
    .unwrap_err();
    assert!(matches!(err, MixerError::EmptyDirectory(_)));
    let err = build_dataset(
        &root.path().join("nope"),
        &root.path().join("bg"),
        &root.path().join("o"),
        &small_config(0),
    )
    .unwrap_err();
    assert!(err.is_io());
}

#[test]
fn manifest_rejects_unknown_fields_and_duplicates() {
    let line = r#"{"id":"a","mixture_path":"m.wav","source_paths":["x","y"],"query_texts":["p","q"],"snr_db":0.0,"seed":1,"split_tag":"train","extra":1}"#;
    assert!(MixtureManifest::from_jsonl(line).is_err());
    let e = ManifestEntry {
        id: "a".into(),
        mixture_path: "m.wav".into(),
        source_paths: vec!["x".into(), "y".into()],
        query_texts: vec!["p".into(), "q".into()],
        snr_db: 0.0,
        seed: 1,
        split_tag: "train".into(),
    };
    let m = MixtureManifest {
        entries: vec![e.clone(), e],
    };
    assert!(m.validate(Path::new("/")).is_err());
    let json: serde_json::Value = serde_json::from_str(m.to_jsonl().lines().next().unwrap()).unwrap();
    let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "id",
            "mixture_path",
            "query_texts",
            "seed",
            "snr_db",
            "source_paths",
            "split_tag"
        ]
    );
}

proptest! {
    #[test]
    fn mix_invariants_hold(seed in 0u64..500, snr in -5.0f64..5.0, len in 200usize..3_000) {
        let fg = noise(len, seed, 8_000);
        let bg = tone(100.0 + seed as f64, len / 2 + 1, 8_000);
        let out = mix_clips(&fg, &bg, snr, 8_000, 0.1, seed).unwrap();
        for i in 0..out.mixture.len() {
            prop_assert_eq!(
                i32::from(out.mixture_pcm[i]),
                i32::from(out.sources_pcm[0][i]) + i32::from(out.sources_pcm[1][i])
            );
        }
        let measured = 20.0 * (rms(&out.sources[0].samples) / rms(&out.sources[1].samples)).log10();
        prop_assert!((measured - snr).abs() < 0.01);
    }

    #[test]
    fn normalize_hits_target(seed in 0u64..1000, target in 1e-3f64..2.0) {
        let c = noise(257, seed, 8_000);
        let n = normalize_rms(&c, target).unwrap();
        prop_assert!((n.rms() - target).abs() <= 1e-9 * target);
    }
}
