//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured runtime. Heavy corpora are shared through OnceLocks so the
//! benchmark and its ablation reuse one set of trained models.
//!
//! Run with `cargo test -p spinalis-cli --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinalis::augment::{
    augment_dataset, extract_csf_path, extract_tumor, glide_tumor, AugmentConfig, AugmentInput,
    GlideConfig,
};
use spinalis::cnn::{self, Activation, CnnArchitecture, LayerSpec, TrainConfig};
use spinalis::fcm::{self, FcmConfig};
use spinalis::forest::{self, ForestConfig, Samples};
use spinalis::localize::{fuse_tumor_with_labels, label_vertebrae};
use spinalis::metrics::{self, Level};
use spinalis::phantom::{generate_phantom, inject_tumor, PhantomConfig, TumorSpec};
use spinalis::segment::{segment_volume, train_segmenter, SegmenterModel, TrainSettings};
use spinalis::volume::{label as lbl, Mask2d, MaskSlice, MaskVolume, Slice, TumorType, Volume};
use spinalis_cli::corpus::split_corpus;

fn pass(criterion: usize, name: &str, details: String, started: Instant) -> f64 {
    let elapsed = started.elapsed().as_secs_f64();
    println!("ACCEPTANCE {criterion} {name}: PASS ({details}; {elapsed:.2}s)");
    elapsed
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_metrics_match_brute_force_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for case in 0..1000 {
        let w = rng.gen_range(1..=16usize);
        let h = rng.gen_range(1..=16usize);
        let density = rng.gen_range(0.05..0.9f64);
        let build = |rng: &mut ChaCha8Rng| {
            let labels: Vec<u8> = (0..w * h)
                .map(|_| if rng.gen_bool(density) { 100 } else { 0 })
                .collect();
            MaskVolume::new(w, h, 1, [1.0, 1.0, 1.0], labels).unwrap()
        };
        let pred = build(&mut rng);
        let truth = build(&mut rng);

        // brute-force set-counting oracle
        let pset: HashSet<usize> =
            pred.labels().iter().enumerate().filter(|(_, l)| **l != 0).map(|(i, _)| i).collect();
        let tset: HashSet<usize> =
            truth.labels().iter().enumerate().filter(|(_, l)| **l != 0).map(|(i, _)| i).collect();
        let tp = pset.intersection(&tset).count() as u64;
        let fp = pset.difference(&tset).count() as u64;
        let fn_ = tset.difference(&pset).count() as u64;
        let tn = (w * h) as u64 - tp - fp - fn_;

        let counts = metrics::confusion_counts(&pred, &truth, Level::Pixel).unwrap();
        assert_eq!((counts.tp, counts.fp, counts.fn_, counts.tn), (tp, fp, fn_, tn), "case {case}");

        let iou = metrics::iou(&counts);
        let iou_bf = if tp + fp + fn_ == 0 { None } else { Some(tp as f64 / (tp + fp + fn_) as f64) };
        assert_eq!(iou, iou_bf, "case {case}: iou");

        let dice = metrics::dice(&pred, &truth).unwrap();
        let dice_bf = if pset.is_empty() && tset.is_empty() {
            None
        } else {
            Some(2.0 * tp as f64 / (pset.len() + tset.len()) as f64)
        };
        assert_eq!(dice, dice_bf, "case {case}: dice");

        let acc = metrics::class_accuracy(&counts).unwrap();
        let acc_bf = (tp + tn) as f64 / (w * h) as f64;
        assert_eq!(acc, acc_bf, "case {case}: accuracy");

        // algebraic link Dice = 2 IoU / (1 + IoU)
        if let (Some(d), Some(i)) = (dice, iou) {
            assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12, "case {case}: link");
        }
    }
    let elapsed = pass(1, "metrics oracle", "1000 seeded mask pairs, exact".into(), started);
    assert!(elapsed < 10.0, "criterion 1 must finish in 10s, took {elapsed:.2}s");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_fcm_suite() {
    let started = Instant::now();
    // membership rows sum to 1 at every iteration, objective non-increasing,
    // on 100 seeded runs
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37));
        let points: Vec<f64> = (0..80).map(|_| rng.gen::<f64>()).collect();
        let full = fcm::fit(&points, 1, &FcmConfig { c: 3, seed, max_iter: 20, ..Default::default() })
            .unwrap();
        for pair in full.objective_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "seed {seed}: objective rose");
        }
        // deterministic prefix reruns expose the memberships of every
        // intermediate iteration
        for cap in 1..=full.iterations_run {
            let prefix = fcm::fit(
                &points,
                1,
                &FcmConfig { c: 3, seed, max_iter: cap, ..Default::default() },
            )
            .unwrap();
            for k in 0..points.len() {
                let sum: f64 = prefix.membership(k).iter().sum();
                assert!(
                    (sum - 1.0).abs() < 1e-9,
                    "seed {seed} iteration {cap}: row sum {sum}"
                );
            }
            assert_eq!(
                prefix.objective_history[..],
                full.objective_history[..cap.min(full.objective_history.len())],
                "prefix determinism"
            );
        }
    }
    // two-blob recovery
    let blobs = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let model =
        fcm::fit(&blobs, 1, &FcmConfig { c: 2, seed: 42, ..Default::default() }).unwrap();
    let mut cs = model.centroids.clone();
    cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((cs[0] - 0.0).abs() < 0.05 && (cs[1] - 1.0).abs() < 0.05, "centroids {cs:?}");

    let elapsed = pass(
        2,
        "FCM suite",
        "100 seeded runs, per-iteration row sums, monotone J, blob recovery".into(),
        started,
    );
    assert!(elapsed < 30.0, "criterion 2 must finish in 30s, took {elapsed:.2}s");
}

// ---------------------------------------------------------------- criterion 3

fn brute_force_split(
    features: &[f64],
    n_features: usize,
    labels: &[usize],
) -> Option<(usize, f64, f64)> {
    let n = labels.len();
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut parent = vec![0u64; n_classes];
    for &l in labels {
        parent[l] += 1;
    }
    let parent_gini = forest::gini(&parent).unwrap();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..n_features {
        let mut values: Vec<f64> = (0..n).map(|i| features[i * n_features + f]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for w in values.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            if t <= w[0] || t >= w[1] {
                continue;
            }
            let mut left = vec![0u64; n_classes];
            let mut right = vec![0u64; n_classes];
            let mut n_left = 0usize;
            for i in 0..n {
                if features[i * n_features + f] <= t {
                    left[labels[i]] += 1;
                    n_left += 1;
                } else {
                    right[labels[i]] += 1;
                }
            }
            if n_left == 0 || n_left == n {
                continue;
            }
            let wg = (n_left as f64 * forest::gini(&left).unwrap()
                + (n - n_left) as f64 * forest::gini(&right).unwrap())
                / n as f64;
            if wg >= parent_gini {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bf, bt, bg)) => {
                    wg < *bg || (wg == *bg && (f < *bf || (f == *bf && t < *bt)))
                }
            };
            if better {
                best = Some((f, t, wg));
            }
        }
    }
    best
}

#[test]
fn criterion_3_forest_suite() {
    let started = Instant::now();
    // exhaustive brute-force agreement on seeded instances up to 25 x 5
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=25usize);
        let f = rng.gen_range(1..=5usize);
        let quant = rng.gen_range(2..10u32);
        let features: Vec<f64> =
            (0..n * f).map(|_| rng.gen_range(0..quant) as f64 / quant as f64).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let samples = Samples::new(&features, f, &labels).unwrap();
        let subset: Vec<usize> = (0..f).collect();
        let got = forest::best_split(samples, &subset).unwrap();
        let want = brute_force_split(&features, f, &labels);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((wf, wt, wg))) => {
                assert_eq!(g.feature, wf, "seed {seed}");
                assert_eq!(g.threshold, wt, "seed {seed}");
                assert_eq!(g.impurity, wg, "seed {seed}");
            }
            other => panic!("seed {seed}: {other:?}"),
        }
    }
    // pure-node Gini is exactly zero
    assert_eq!(forest::gini(&[17, 0, 0]).unwrap(), 0.0);
    assert_eq!(forest::gini(&[0, 0, 9]).unwrap(), 0.0);

    // byte-exact determinism of seeded training
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);
    let features: Vec<f64> = (0..200 * 4).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<usize> = (0..200).map(|i| (i / 100) as usize).collect();
    let cfg = ForestConfig { n_trees: 12, seed: 99, ..Default::default() };
    let a = forest::to_json(&forest::train(&features, 4, &labels, &cfg).unwrap()).unwrap();
    let b = forest::to_json(&forest::train(&features, 4, &labels, &cfg).unwrap()).unwrap();
    assert_eq!(a.as_bytes(), b.as_bytes(), "serialized models must be byte-identical");

    let elapsed = pass(
        3,
        "forest suite",
        "300 brute-force split instances, pure gini, byte-exact determinism".into(),
        started,
    );
    assert!(elapsed < 30.0, "criterion 3 must finish in 30s, took {elapsed:.2}s");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_cnn_suite() {
    let started = Instant::now();

    // conv_output_size vs actual naive-convolution shapes over the grid
    for input in 3..=32usize {
        for filter in 1..=7usize {
            for pad in 0..=3usize {
                for stride in 1..=3usize {
                    // run a real naive 1-D convolution over a padded signal
                    // and count the outputs it produces
                    let padded = vec![1.0f64; input + 2 * pad];
                    let mut outputs = 0usize;
                    let mut start = 0usize;
                    while start + filter <= padded.len() {
                        let _: f64 = padded[start..start + filter].iter().sum();
                        outputs += 1;
                        start += stride;
                    }
                    match cnn::conv_output_size(input, filter, pad, stride) {
                        Ok(n) => assert_eq!(
                            n, outputs,
                            "input {input} filter {filter} pad {pad} stride {stride}"
                        ),
                        Err(_) => assert_eq!(
                            outputs, 0,
                            "errored but naive conv produced {outputs} outputs \
                             (input {input} filter {filter} pad {pad} stride {stride})"
                        ),
                    }
                }
            }
        }
    }

    // finite-difference gradient check on a seeded toy net
    let arch = CnnArchitecture {
        input_h: 8,
        input_w: 8,
        input_channels: 1,
        classes: 3,
        layers: vec![
            LayerSpec::Conv { filters: 2, kernel: 3, stride: 1, padding: 1, activation: Activation::Relu },
            LayerSpec::Conv { filters: 2, kernel: 3, stride: 1, padding: 1, activation: Activation::Relu },
            LayerSpec::MaxPool { size: 2, stride: 2 },
            LayerSpec::Dense { units: 3, activation: Activation::Linear },
        ],
    };
    let model = cnn::CnnModel::new(arch.clone(), 0xBEEF).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<(Vec<f64>, usize)> =
        (0..3).map(|i| ((0..64).map(|_| rng.gen::<f64>()).collect(), i)).collect();
    let (_, grads) = cnn::loss_and_gradients(&model, &batch).unwrap();
    let mut max_rel = 0.0f64;
    let eps = 1e-5;
    let mut probe = model.clone();
    let mut check = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    };
    for li in 0..probe.layer_count() {
        for wi in 0..grads.weights(li).len() {
            let orig = probe.weights(li)[wi];
            probe.weights_mut(li)[wi] = orig + eps;
            let (lp, _) = cnn::loss_and_gradients(&probe, &batch).unwrap();
            probe.weights_mut(li)[wi] = orig - eps;
            let (lm, _) = cnn::loss_and_gradients(&probe, &batch).unwrap();
            probe.weights_mut(li)[wi] = orig;
            check(grads.weights(li)[wi], (lp - lm) / (2.0 * eps));
        }
        for bi in 0..grads.bias(li).len() {
            let orig = probe.bias(li)[bi];
            probe.bias_mut(li)[bi] = orig + eps;
            let (lp, _) = cnn::loss_and_gradients(&probe, &batch).unwrap();
            probe.bias_mut(li)[bi] = orig - eps;
            let (lm, _) = cnn::loss_and_gradients(&probe, &batch).unwrap();
            probe.bias_mut(li)[bi] = orig;
            check(grads.bias(li)[bi], (lp - lm) / (2.0 * eps));
        }
    }
    assert!(max_rel < 1e-3, "max relative gradient error {max_rel:.2e}");

    // softmax normalization within 1e-6
    let image: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
    let probs = cnn::forward(&model, &image).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(probs.iter().all(|p| (0.0..1.0).contains(p)));

    let elapsed = pass(
        4,
        "CNN suite",
        format!("exhaustive shape grid, grad check {max_rel:.1e}, softmax"),
        started,
    );
    assert!(elapsed < 120.0, "criterion 4 must finish in 2min, took {elapsed:.2}s");
}

// ---------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_augmentation_suite() {
    let started = Instant::now();

    // straight 60-px CSF band with marker vertebrae at rows 10 and 70
    let (w, h) = (64, 88);
    let mut labels = vec![lbl::BACKGROUND; w * h];
    for row in 0..h {
        for col in 24..36 {
            labels[col + w * row] = lbl::CSF;
        }
    }
    for dr in 0..3usize {
        labels[2 + w * (9 + dr)] = lbl::T11;
        labels[2 + w * (69 + dr)] = lbl::L5;
    }
    let mask = MaskSlice::new(w, h, labels, 0).unwrap();
    let csf = mask.binary(lbl::CSF);
    let host = Slice::filled(w, h, 0.1, 0);

    // synthetic tumor blob
    let mut blob = Slice::filled(w, h, 0.2, 0);
    let mut tumor_mask = Mask2d::empty(w, h);
    for row in 0..h {
        for col in 0..w {
            let d = ((row as f64 - 40.0).powi(2) + (col as f64 - 30.0).powi(2)).sqrt();
            if d <= 3.0 {
                blob.set(col, row, 0.9);
                tumor_mask.set(col, row, true);
            }
        }
    }
    let (instance, inpainted) =
        extract_tumor(&blob, &tumor_mask, TumorType::IntraduralExtramedullary).unwrap();

    // paste-back reconstruction
    let restored = instance.paste_at_origin(&inpainted);
    let max_err = blob
        .data()
        .iter()
        .zip(restored.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_err < 1e-3, "paste-back max error {max_err}");

    // 18-22 placements over the 60-px path at step 3
    let path = extract_csf_path(&mask, lbl::T11, lbl::L5).unwrap();
    assert!((path.arc_length() - 60.0).abs() < 1e-9);
    let placements = glide_tumor(&host, &path, &instance, &GlideConfig::default(), &csf).unwrap();
    assert!(
        (18..=22).contains(&placements.len()),
        "expected 18..=22 placements, got {}",
        placements.len()
    );

    // containment in the 2-px dilated CSF, checked by brute-force distance
    for p in &placements {
        for (col, row) in p.truth.iter_set() {
            let mut near = false;
            'scan: for dr in -2i64..=2 {
                for dc in -2i64..=2 {
                    let r = row as i64 + dr;
                    let c = col as i64 + dc;
                    if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w
                        && csf.get(c as usize, r as usize)
                    {
                        near = true;
                        break 'scan;
                    }
                }
            }
            assert!(near, "position {}: truth pixel ({col},{row}) outside dilated CSF", p.position_index);
        }
    }

    // rotation doubling on a real phantom corpus
    let cfg = PhantomConfig { width: 80, height: 128, depth: 8, seed: 5, ..Default::default() };
    let (v, m) = generate_phantom(&cfg).unwrap();
    let spec = TumorSpec::for_type(TumorType::IntraduralExtramedullary, lbl::L3, 5);
    let (v2, m2, _) = inject_tumor(&v, &m, &spec).unwrap();
    let samples = augment_dataset(
        &[AugmentInput {
            id: "a".into(),
            volume: v2,
            mask: m2,
            tumor_type: TumorType::IntraduralExtramedullary,
        }],
        &AugmentConfig { seed: 3, ..Default::default() },
    )
    .unwrap();
    let glide_outputs = samples.iter().filter(|s| s.record.direction.is_none()).count();
    assert_eq!(samples.len(), 2 * glide_outputs, "rotation doubling must be exactly 2x");

    let elapsed = pass(
        5,
        "augmentation suite",
        format!("{} placements, containment, 2x doubling, paste-back {max_err:.1e}", placements.len()),
        started,
    );
    assert!(elapsed < 60.0, "criterion 5 must finish in 1min, took {elapsed:.2}s");
}

// ------------------------------------------------------- criteria 6 and 7

struct BenchEntry {
    id: String,
    volume: Volume,
    truth: MaskVolume,
    has_tumor: bool,
}

struct BenchOutcome {
    mean_dice_fcm: f64,
    mean_dice_no_fcm: f64,
    class_accuracy: f64,
    control_empty_fraction: f64,
    n_test_tumor: usize,
    n_test_control: usize,
    gen_train_eval_seconds: f64,
}

/// Benchmark corpus constants: frozen seeds and phantom parameters.
const BENCH_MASTER_SEED: u64 = 77;
const BENCH_SPLIT_SEED: u64 = 7;
const BENCH_NOISE_SIGMA: f32 = 0.10;
const BENCH_TUMOR_INTENSITY: f32 = 0.92;

fn bench_phantom_cfg(seed: u64) -> PhantomConfig {
    PhantomConfig {
        width: 80,
        height: 128,
        depth: 8,
        noise_sigma: BENCH_NOISE_SIGMA,
        seed,
        ..Default::default()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn bench_corpus() -> Vec<BenchEntry> {
    (0..100usize)
        .map(|i| {
            let cfg = bench_phantom_cfg(splitmix64(BENCH_MASTER_SEED ^ i as u64));
            let (volume, mask) = generate_phantom(&cfg).unwrap();
            let tumor_free = (i + 1) % 5 == 0;
            if tumor_free {
                let truth = MaskVolume::zeros(
                    volume.width(),
                    volume.height(),
                    volume.depth(),
                    volume.spacing(),
                )
                .unwrap();
                BenchEntry { id: format!("p{i:04}"), volume, truth, has_tumor: false }
            } else {
                let (tumor_type, level) = spinalis_cli::commands::tumor_plan(i);
                let mut spec = TumorSpec::for_type(
                    tumor_type,
                    level,
                    splitmix64(BENCH_MASTER_SEED ^ ((i as u64) << 17)),
                );
                spec.intensity_mean = BENCH_TUMOR_INTENSITY;
                let (v2, _, outcome) = inject_tumor(&volume, &mask, &spec).unwrap();
                BenchEntry { id: format!("p{i:04}"), volume: v2, truth: outcome.truth, has_tumor: true }
            }
        })
        .collect()
}

fn bench_settings(use_fcm: bool) -> TrainSettings {
    TrainSettings {
        forest: ForestConfig { n_trees: 25, ..Default::default() },
        features: spinalis::features::FeatureConfig { use_fcm, ..Default::default() },
        // noise speckle that survives the 0.5 threshold clusters below ~30
        // px at this sigma while true per-slice tumor components stay above
        // ~50 px, so the component floor separates them with margin
        relevance: spinalis::segment::RelevanceConfig {
            min_component_px: 40,
            ..Default::default()
        },
        seed: BENCH_SPLIT_SEED,
        ..Default::default()
    }
}

fn evaluate_arm(
    model: &SegmenterModel,
    test: &[&BenchEntry],
) -> (f64, f64, f64, usize, usize) {
    let mut dice_sum = 0.0;
    let mut dice_n = 0usize;
    let mut total = metrics::ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 0, level: Level::Pixel };
    let mut controls = 0usize;
    let mut empty_controls = 0usize;
    for entry in test {
        let result = segment_volume(&entry.volume, model).unwrap();
        let counts = metrics::confusion_counts(&result.mask, &entry.truth, Level::Pixel).unwrap();
        total.tp += counts.tp;
        total.fp += counts.fp;
        total.fn_ += counts.fn_;
        total.tn += counts.tn;
        if entry.has_tumor {
            let d = metrics::dice(&result.mask, &entry.truth).unwrap().unwrap_or(0.0);
            dice_sum += d;
            dice_n += 1;
        } else {
            controls += 1;
            if result.mask.labels().iter().all(|l| *l == 0) {
                empty_controls += 1;
            }
        }
    }
    let accuracy = metrics::class_accuracy(&total).unwrap();
    let empty_fraction =
        if controls > 0 { empty_controls as f64 / controls as f64 } else { 1.0 };
    (dice_sum / dice_n as f64, accuracy, empty_fraction, dice_n, controls)
}

fn bench_outcome() -> &'static BenchOutcome {
    static OUTCOME: OnceLock<BenchOutcome> = OnceLock::new();
    OUTCOME.get_or_init(|| {
        let started = Instant::now();
        let corpus = bench_corpus();
        let ids: Vec<String> = corpus.iter().map(|e| e.id.clone()).collect();
        let (train_ids, test_ids) = split_corpus(&ids, 0.8, BENCH_SPLIT_SEED).unwrap();
        let train: Vec<(Volume, MaskVolume)> = corpus
            .iter()
            .filter(|e| train_ids.contains(&e.id))
            .map(|e| (e.volume.clone(), e.truth.clone()))
            .collect();
        let test: Vec<&BenchEntry> =
            corpus.iter().filter(|e| test_ids.contains(&e.id)).collect();

        let model_fcm = train_segmenter(&train, &bench_settings(true)).unwrap();
        let (mean_dice_fcm, class_accuracy, control_empty_fraction, n_test_tumor, n_test_control) =
            evaluate_arm(&model_fcm, &test);
        let gen_train_eval_seconds = started.elapsed().as_secs_f64();

        let model_no_fcm = train_segmenter(&train, &bench_settings(false)).unwrap();
        let (mean_dice_no_fcm, _, _, _, _) = evaluate_arm(&model_no_fcm, &test);

        BenchOutcome {
            mean_dice_fcm,
            mean_dice_no_fcm,
            class_accuracy,
            control_empty_fraction,
            n_test_tumor,
            n_test_control,
            gen_train_eval_seconds,
        }
    })
}

#[test]
fn criterion_6_end_to_end_phantom_benchmark() {
    let started = Instant::now();
    let outcome = bench_outcome();
    assert!(
        outcome.mean_dice_fcm >= 0.90,
        "mean test Dice {:.4} below 0.90 over {} tumor volumes",
        outcome.mean_dice_fcm,
        outcome.n_test_tumor
    );
    assert!(
        outcome.class_accuracy >= 0.98,
        "pixel class accuracy {:.4} below 0.98",
        outcome.class_accuracy
    );
    assert!(
        outcome.control_empty_fraction >= 0.95,
        "only {:.0}% of {} control volumes were empty",
        outcome.control_empty_fraction * 100.0,
        outcome.n_test_control
    );
    assert!(
        outcome.gen_train_eval_seconds < 900.0,
        "benchmark arm took {:.1}s, budget is 15 minutes",
        outcome.gen_train_eval_seconds
    );
    pass(
        6,
        "end-to-end phantom benchmark",
        format!(
            "mean Dice {:.4} over {} test volumes, accuracy {:.4}, {:.0}% of {} controls empty, pipeline {:.1}s",
            outcome.mean_dice_fcm,
            outcome.n_test_tumor,
            outcome.class_accuracy,
            outcome.control_empty_fraction * 100.0,
            outcome.n_test_control,
            outcome.gen_train_eval_seconds
        ),
        started,
    );
}

#[test]
fn criterion_7_ablation_direction() {
    let started = Instant::now();
    let outcome = bench_outcome();
    assert!(
        outcome.mean_dice_no_fcm < outcome.mean_dice_fcm,
        "removing FCM features did not decrease Dice: with {:.4}, without {:.4}",
        outcome.mean_dice_fcm,
        outcome.mean_dice_no_fcm
    );
    pass(
        7,
        "ablation direction",
        format!(
            "Dice with FCM features {:.4} > without {:.4} (gap {:.4})",
            outcome.mean_dice_fcm,
            outcome.mean_dice_no_fcm,
            outcome.mean_dice_fcm - outcome.mean_dice_no_fcm
        ),
        started,
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_classification() {
    let started = Instant::now();

    // 150 phantoms, 50 per type; crops split by source volume
    let mut crops: Vec<(Vec<f64>, usize, String)> = Vec::new();
    let arch = CnnArchitecture::classifier_with_widths(128, &[6, 6, 12, 12, 24, 24], 48);
    arch.validate_classifier_structure().unwrap();
    for i in 0..150usize {
        let cfg = PhantomConfig {
            width: 80,
            height: 128,
            depth: 8,
            noise_sigma: 0.05,
            seed: splitmix64(0xC8 ^ i as u64),
            ..Default::default()
        };
        let (volume, mask) = generate_phantom(&cfg).unwrap();
        let (tumor_type, level) = spinalis_cli::commands::tumor_plan(i);
        let spec = TumorSpec::for_type(tumor_type, level, splitmix64(0xC8 ^ ((i as u64) << 13)));
        let (v2, _, outcome) = inject_tumor(&volume, &mask, &spec).unwrap();
        // context crops around the truth bounding box per tumor slice
        let normalized = v2.normalized();
        for z in 0..outcome.truth.depth() {
            let ts = outcome.truth.extract_slice(z).unwrap();
            let tumor = ts.binary(lbl::TUMOR);
            if tumor.count() < 12 {
                continue;
            }
            let (mut c0, mut r0, mut c1, mut r1) = (usize::MAX, usize::MAX, 0, 0);
            for (col, row) in tumor.iter_set() {
                c0 = c0.min(col);
                c1 = c1.max(col);
                r0 = r0.min(row);
                r1 = r1.max(row);
            }
            let grow_c = c1 - c0 + 1;
            let grow_r = r1 - r0 + 1;
            let c0 = c0.saturating_sub(grow_c);
            let r0 = r0.saturating_sub(grow_r);
            let c1 = (c1 + grow_c).min(v2.width() - 1);
            let r1 = (r1 + grow_r).min(v2.height() - 1);
            let slice = normalized.extract_slice(z).unwrap();
            let mut data = Vec::with_capacity((c1 - c0 + 1) * (r1 - r0 + 1));
            for row in r0..=r1 {
                for col in c0..=c1 {
                    data.push(slice.get(col, row));
                }
            }
            let crop = Slice::new(c1 - c0 + 1, r1 - r0 + 1, data, z).unwrap();
            crops.push((
                cnn::roi_to_input(&crop, &arch).unwrap(),
                tumor_type.class_index(),
                format!("p{i:04}"),
            ));
        }
    }

    // split by source, then take exactly 100 train / 20 test crops per class
    let ids: Vec<String> = crops.iter().map(|c| c.2.clone()).collect();
    let (train_ids, _) = split_corpus(&ids, 0.8, 11).unwrap();
    let mut train: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut test: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut train_quota = [100usize; 3];
    let mut test_quota = [20usize; 3];
    for (img, class, source) in crops {
        if train_ids.contains(&source) {
            if train_quota[class] > 0 {
                train_quota[class] -= 1;
                train.push((img, class));
            }
        } else if test_quota[class] > 0 {
            test_quota[class] -= 1;
            test.push((img, class));
        }
    }
    assert_eq!(train.len(), 300, "need exactly 300 train crops, quotas left {train_quota:?}");
    assert_eq!(test.len(), 60, "need exactly 60 test crops, quotas left {test_quota:?}");

    let cfg = TrainConfig { epochs: 20, learning_rate: 1e-3, seed: 2, ..Default::default() };
    assert!(cfg.epochs <= 40, "criterion caps training at 40 epochs");
    let mut model = cnn::CnnModel::new(arch, 0xC8).unwrap();
    let history = cnn::train(&mut model, &train, None, &cfg).unwrap();
    let first_loss = history.first().unwrap().train_loss;
    let last_loss = history.last().unwrap().train_loss;
    assert!(last_loss < first_loss, "train loss must decrease: {first_loss:.4} -> {last_loss:.4}");

    let mut correct = 0usize;
    for (img, class) in &test {
        let probs = cnn::forward(&model, img).unwrap();
        let pred = (0..3).max_by(|a, b| probs[*a].partial_cmp(&probs[*b]).unwrap()).unwrap();
        correct += usize::from(pred == *class);
    }
    let accuracy = correct as f64 / test.len() as f64;
    assert!(accuracy >= 0.95, "test accuracy {accuracy:.3} below 0.95 ({correct}/60)");

    let elapsed = pass(
        8,
        "classification",
        format!(
            "300/60 crops, {} epochs, loss {first_loss:.3}->{last_loss:.3}, test accuracy {accuracy:.3}",
            history.len()
        ),
        started,
    );
    assert!(elapsed < 600.0, "criterion 8 must finish in 10min, took {elapsed:.2}s");
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_localization() {
    let started = Instant::now();
    let mut origin_correct = 0usize;
    let mut impacted_contains = 0usize;
    const N: usize = 50;
    for i in 0..N {
        let cfg = PhantomConfig {
            width: 80,
            height: 128,
            depth: 8,
            seed: splitmix64(0x10C ^ i as u64),
            ..Default::default()
        };
        let (volume, mask) = generate_phantom(&cfg).unwrap();
        let (tumor_type, level) = spinalis_cli::commands::tumor_plan(i);
        let spec = TumorSpec::for_type(tumor_type, level, splitmix64(0x10C ^ ((i as u64) << 9)));
        let (_, merged, outcome) = inject_tumor(&volume, &mask, &spec).unwrap();

        // exercise the ordering heuristic: strip names down to the generic
        // vertebra label before labeling
        let generic = MaskVolume::new(
            merged.width(),
            merged.height(),
            merged.depth(),
            merged.spacing(),
            merged
                .labels()
                .iter()
                .map(|l| if lbl::is_vertebra(*l) { lbl::VERTEBRA_GENERIC } else { *l })
                .collect(),
        )
        .unwrap();
        let labeling = label_vertebrae(&generic).unwrap();
        let report = fuse_tumor_with_labels(&outcome.truth, &labeling, 5.0).unwrap();
        origin_correct += usize::from(report.origin == level);
        impacted_contains += usize::from(report.impacted.contains(&level));
    }
    let origin_rate = origin_correct as f64 / N as f64;
    assert!(origin_rate >= 0.98, "origin accuracy {origin_rate:.3} below 0.98");
    assert_eq!(impacted_contains, N, "impacted set must contain the true level on all phantoms");

    let elapsed = pass(
        9,
        "localization",
        format!("origin {origin_correct}/{N}, impacted containment {impacted_contains}/{N}"),
        started,
    );
    assert!(elapsed < 120.0, "criterion 9 must finish in 2min, took {elapsed:.2}s");
}
