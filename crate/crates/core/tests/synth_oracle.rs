use std::f64::consts::PI;

use evmcnn::featex::{Extractor, FeatureConfig};
use evmcnn::frames::FrameFormat;
use evmcnn::ingest::windows;
use evmcnn::roi::RoiIndices;
use evmcnn::synth::{generate, HrTimeline, SynthSpec};

fn dft_mag(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            });
            (re * re + im * im).sqrt()
        })
        .collect()
}

fn spec_90() -> SynthSpec {
    SynthSpec {
        duration_s: 4,
        hr: HrTimeline::constant(90.0).unwrap(),
        ..SynthSpec::default()
    }
}

#[test]
fn green_mean_spectrum_peaks_near_one_and_a_half_hz() {
    let spec = spec_90();
    let idx = RoiIndices::default();
    for w in spec.windows(&idx).unwrap().windows {
        let green: Vec<f64> = w.roi_window.crops().iter().map(|c| c.channel_means()[1]).collect();
        let programmed: Vec<f64> = (0..25)
            .map(|i| spec.skin_color(spec.time_of(w.window_index * 25 + i))[1])
            .collect();
        let got = dft_mag(&green);
        let want = dft_mag(&programmed);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-6);
        }
        let peak = (1..=12).max_by(|&a, &b| got[a].total_cmp(&got[b])).unwrap();
        assert!(peak == 1 || peak == 2, "peak at bin {peak}");
    }
}

#[test]
fn zero_amplitude_gives_zero_features() {
    let spec = SynthSpec { amplitude: [0.0; 3], ..spec_90() };
    let ex = Extractor::new(FeatureConfig::default()).unwrap();
    for w in spec.windows(&RoiIndices::default()).unwrap().windows {
        let f = ex.extract(&w.roi_window).unwrap();
        assert!(f.data().iter().all(|v| v.abs() < 1e-9));
    }
}

#[test]
fn png_frames_within_one_level_of_programmed_colour() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { duration_s: 2, format: FrameFormat::Png8, ..spec_90() };
    let idx = RoiIndices::default();
    let entry = generate(&spec, dir.path(), &idx).unwrap();
    let ws = windows(&entry, &idx).unwrap();
    assert_eq!(ws.windows.len(), 2);
    for w in &ws.windows {
        for (i, crop) in w.roi_window.crops().iter().enumerate() {
            let want = spec.skin_color(spec.time_of(w.window_index * 25 + i));
            let got = crop.channel_means();
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() <= 1.0, "{} vs {}", got[c], want[c]);
            }
        }
    }
}

#[test]
fn float_frames_match_in_memory_render() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { duration_s: 2, noise_sigma: 0.0, ..spec_90() };
    let idx = RoiIndices::default();
    let entry = generate(&spec, dir.path(), &idx).unwrap();
    let disk = windows(&entry, &idx).unwrap();
    for w in &disk.windows {
        for (i, crop) in w.roi_window.crops().iter().enumerate() {
            let want = spec.skin_color(spec.time_of(w.window_index * 25 + i));
            let got = crop.channel_means();
            for c in 0..3 {
                // f32 storage
                assert!((got[c] - want[c]).abs() <= 1e-6 * want[c].abs());
            }
        }
    }
}
