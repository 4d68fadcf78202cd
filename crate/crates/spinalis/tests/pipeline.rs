//! Cross-module integration: phantom -> augment -> segment -> localize.

use spinalis::augment::{augment_dataset, AugmentConfig, AugmentInput};
use spinalis::label;
use spinalis::localize::{fuse_tumor_with_labels, label_vertebrae};
use spinalis::phantom::{generate_phantom, inject_tumor, PhantomConfig, TumorSpec};
use spinalis::preprocess::{reconstruct_slices, InterpConfig};
use spinalis::volume::{MaskVolume, TumorType, Volume};

fn tumor_phantom(seed: u64) -> (Volume, MaskVolume, MaskVolume) {
    let cfg = PhantomConfig { width: 96, height: 160, depth: 9, seed, ..Default::default() };
    let (v, m) = generate_phantom(&cfg).unwrap();
    let spec = TumorSpec::for_type(TumorType::IntraduralExtramedullary, label::L3, seed ^ 0xa5);
    let (v2, m2, outcome) = inject_tumor(&v, &m, &spec).unwrap();
    (v2, m2, outcome.truth)
}

#[test]
fn augmentation_doubles_and_is_deterministic() {
    let (v, m, _) = tumor_phantom(31);
    let input = AugmentInput {
        id: "p031".to_string(),
        volume: v,
        mask: m,
        tumor_type: TumorType::IntraduralExtramedullary,
    };
    let cfg = AugmentConfig { seed: 5, ..Default::default() };
    let samples = augment_dataset(std::slice::from_ref(&input), &cfg).unwrap();
    assert!(!samples.is_empty());
    assert_eq!(samples.len() % 2, 0, "rotation doubling must give exactly 2x");

    // every even index is a glide output, every odd its rotated twin
    let glide_count = samples.iter().filter(|s| s.record.direction.is_none()).count();
    assert_eq!(samples.len(), glide_count * 2);

    // manifests and payloads identical across reruns with the same seed
    let again = augment_dataset(std::slice::from_ref(&input), &cfg).unwrap();
    assert_eq!(samples.len(), again.len());
    for (a, b) in samples.iter().zip(&again) {
        assert_eq!(a.record, b.record);
        assert_eq!(a.image.data(), b.image.data());
        assert_eq!(a.truth.data(), b.truth.data());
    }

    // different seed changes the rotation angles
    let other = augment_dataset(
        std::slice::from_ref(&input),
        &AugmentConfig { seed: 6, ..Default::default() },
    )
    .unwrap();
    let angles_a: Vec<f64> = samples.iter().map(|s| s.record.angle_deg).collect();
    let angles_b: Vec<f64> = other.iter().map(|s| s.record.angle_deg).collect();
    assert_ne!(angles_a, angles_b);
}

#[test]
fn glide_truth_stays_inside_dilated_canal() {
    let (v, m, _) = tumor_phantom(77);
    let input = AugmentInput {
        id: "p077".to_string(),
        volume: v,
        mask: m.clone(),
        tumor_type: TumorType::IntraduralExtramedullary,
    };
    let cfg = AugmentConfig { seed: 1, ..Default::default() };
    let samples = augment_dataset(std::slice::from_ref(&input), &cfg).unwrap();
    for s in samples.iter().filter(|s| s.record.direction.is_none()) {
        let mask_slice = m.extract_slice(s.record.slice_z).unwrap();
        let mut medium = mask_slice.binary(label::CSF);
        for (col, row) in mask_slice.binary(label::TUMOR).iter_set() {
            medium.set(col, row, true);
        }
        let dilated = medium.dilated(cfg.glide.csf_fit_dilation_px);
        assert!(
            s.truth.subset_of(&dilated),
            "{}: truth leaves the dilated canal",
            s.record.output_path
        );
    }
}

#[test]
fn reconstruction_preserves_phantom_planes() {
    let cfg = PhantomConfig { width: 72, height: 128, depth: 8, seed: 3, ..Default::default() };
    let (v, _) = generate_phantom(&cfg).unwrap();
    let interp = InterpConfig { gap_mm: 3.0, target_spacing_mm: 1.0, kernel_a: -0.5 };
    let out = reconstruct_slices(&v, &interp).unwrap();
    assert_eq!(out.depth(), 3 * (v.depth() - 1) + 1);
    for z in 0..v.depth() {
        assert_eq!(
            v.extract_slice(z).unwrap().data(),
            out.extract_slice(3 * z).unwrap().data(),
            "acquired plane {z} altered"
        );
    }
}

#[test]
fn localization_finds_injected_level() {
    for seed in [11u64, 12, 13] {
        let cfg = PhantomConfig { width: 96, height: 160, depth: 9, seed, ..Default::default() };
        let (v, m) = generate_phantom(&cfg).unwrap();
        let spec = TumorSpec::for_type(TumorType::ExtraDural, label::L2, seed);
        let (_, m2, outcome) = inject_tumor(&v, &m, &spec).unwrap();
        // label vertebrae from the merged mask (tumor voxels are label 100
        // and do not disturb the vertebra components)
        let labeling = label_vertebrae(&m2).unwrap();
        let report = fuse_tumor_with_labels(&outcome.truth, &labeling, 5.0).unwrap();
        assert!(
            report.impacted.contains(&label::L2),
            "seed {seed}: impacted {:?} misses L2",
            report.impacted
        );
        assert_eq!(report.origin, label::L2, "seed {seed}");
    }
}
