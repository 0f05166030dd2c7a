//! Acceptance suite. Each test covers one release criterion and prints a
//! single `ACCEPTANCE <n> <name>: PASS|FAIL|SKIP` line (run with
//! `cargo test --test acceptance -- --nocapture` to see them).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::{Rgb, RgbImage};
use rand::Rng as _;
use smallobj_core::augment::{self, PlacementPolicy, Pools, StrategyConfig, LOW_COUNT_CLASSES};
use smallobj_core::eval::{self, ApProtocol, CrossSizeMode, Detection, EvalConfig};
use smallobj_core::gan::{self, Batch, LaMode, ToyModelParams, TrainingConfig};
use smallobj_core::patch::{ObjectPool, Patch, PatchSource};
use smallobj_core::rng;
use smallobj_core::voc::{
    self, dataset_stats, parse_annotation, write_annotation, AnnotatedObject, BoundingBox,
    ImageAnnotation, SizeClass, VOC_CLASSES,
};

enum Verdict {
    Pass,
    Skip(String),
}

fn criterion<F>(number: u32, name: &str, body: F)
where
    F: FnOnce() -> Result<Verdict, String> + std::panic::UnwindSafe,
{
    let outcome = std::panic::catch_unwind(body);
    match outcome {
        Ok(Ok(Verdict::Pass)) => println!("ACCEPTANCE {number} {name}: PASS"),
        Ok(Ok(Verdict::Skip(why))) => println!("ACCEPTANCE {number} {name}: SKIP ({why})"),
        Ok(Err(why)) => {
            println!("ACCEPTANCE {number} {name}: FAIL ({why})");
            panic!("criterion {number} failed: {why}");
        }
        Err(panic) => {
            let why = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            println!("ACCEPTANCE {number} {name}: FAIL ({why})");
            panic!("criterion {number} failed: {why}");
        }
    }
}

fn check(cond: bool, why: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why.to_string())
    }
}

// ---------------------------------------------------------------------------
// 1. VOC2007 statistics (optional: needs a locally supplied devkit, pointed
//    at by SMALLOBJ_VOC2007 = .../VOCdevkit/VOC2007 with test annotations
//    merged in).
// ---------------------------------------------------------------------------

fn load_split(root: &Path, split: &str) -> Result<Vec<ImageAnnotation>, String> {
    let list = root.join("ImageSets/Main").join(format!("{split}.txt"));
    let ids = std::fs::read_to_string(&list).map_err(|e| format!("{}: {e}", list.display()))?;
    let mut out = Vec::new();
    for id in ids.split_whitespace() {
        let path = root.join("Annotations").join(format!("{id}.xml"));
        let xml = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        out.push(parse_annotation(&xml).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    Ok(out)
}

#[test]
fn criterion_1_voc2007_statistics() {
    criterion(1, "VOC2007 size-group statistics", || {
        let root = match std::env::var("SMALLOBJ_VOC2007") {
            Ok(r) => PathBuf::from(r),
            Err(_) => return Ok(Verdict::Skip("SMALLOBJ_VOC2007 not set".into())),
        };
        let start = std::time::Instant::now();
        let trainval = load_split(&root, "trainval")?;
        let test = load_split(&root, "test")?;
        let tv = dataset_stats(&trainval);
        let te = dataset_stats(&test);
        let expect = [
            (
                tv.size_total(SizeClass::Small).all,
                924u64,
                "trainval small",
            ),
            (
                tv.size_total(SizeClass::Medium).all,
                2406,
                "trainval medium",
            ),
            (tv.size_total(SizeClass::Big).all, 12332, "trainval big"),
            (te.size_total(SizeClass::Small).all, 861, "test small"),
            (te.size_total(SizeClass::Medium).all, 2326, "test medium"),
            (te.size_total(SizeClass::Big).all, 11789, "test big"),
            (
                tv.class_cell("car", SizeClass::Small).all,
                173,
                "trainval small car",
            ),
            (
                te.class_cell("person", SizeClass::Small).all,
                305,
                "test small person",
            ),
        ];
        for (got, want, what) in expect {
            check(got == want, &format!("{what}: got {got}, want {want}"))?;
        }
        check(start.elapsed().as_secs() < 30, "runtime over 30 s")?;
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 2. Evaluation against an independent brute-force oracle.
// ---------------------------------------------------------------------------

/// Oracle IoU: literal pixel-set counting under the inclusive convention.
fn oracle_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    let xmin = a.xmin.min(b.xmin);
    let xmax = a.xmax.max(b.xmax);
    let ymin = a.ymin.min(b.ymin);
    let ymax = a.ymax.max(b.ymax);
    for x in xmin..=xmax {
        for y in ymin..=ymax {
            let in_a = x >= a.xmin && x <= a.xmax && y >= a.ymin && y <= a.ymax;
            let in_b = x >= b.xmin && x <= b.xmax && y >= b.ymin && y <= b.ymax;
            if in_a && in_b {
                inter += 1;
            }
            if in_a || in_b {
                union += 1;
            }
        }
    }
    inter as f64 / union as f64
}

/// Oracle evaluation of one class, written from the stated matching rules:
/// score-descending order (stable), highest-IoU candidate above threshold
/// among unclaimed positives and ignorables; ignorable match -> Ignored,
/// anything else -> FP; then the literal 11-point (or trapezoid-free
/// envelope) formula over the prefix precision/recall points.
fn oracle_class_ap(
    detections: &[Detection],
    ground_truth: &[ImageAnnotation],
    class: &str,
    config: &EvalConfig,
) -> Option<f64> {
    #[derive(Clone)]
    struct Gt {
        bbox: BoundingBox,
        ignorable: bool,
        claimed: bool,
    }
    let mut gts: BTreeMap<&str, Vec<Gt>> = BTreeMap::new();
    let mut n_pos = 0u64;
    for ann in ground_truth {
        for obj in &ann.objects {
            if obj.class_name != class {
                continue;
            }
            let in_filter = config
                .size_filter
                .map(|s| voc::size_class(&obj.bbox) == s)
                .unwrap_or(true);
            if !in_filter && config.cross_size_mode == CrossSizeMode::Strict {
                continue;
            }
            let ignorable = !in_filter || obj.difficult;
            if !ignorable {
                n_pos += 1;
            }
            gts.entry(ann.image_id.as_str()).or_default().push(Gt {
                bbox: obj.bbox,
                ignorable,
                claimed: false,
            });
        }
    }
    if n_pos == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .partial_cmp(&detections[a].score)
            .unwrap()
    });

    let mut curve: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for &i in &order {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(entries) = gts.get_mut(det.image_id.as_str()) {
            for (j, gt) in entries.iter().enumerate() {
                let ov = oracle_iou(&det.bbox, &gt.bbox);
                if ov >= config.iou_threshold
                    && (gt.ignorable || !gt.claimed)
                    && best.map(|(_, b)| ov > b).unwrap_or(true)
                {
                    best = Some((j, ov));
                }
            }
            if let Some((j, _)) = best {
                if entries[j].ignorable {
                    continue; // ignored: contributes nothing
                }
                entries[j].claimed = true;
                tp += 1;
            } else {
                fp += 1;
            }
        } else {
            fp += 1;
        }
        curve.push((tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64));
    }

    let ap = match config.ap_protocol {
        ApProtocol::ElevenPoint => {
            let mut sum = 0.0;
            for t in 0..=10 {
                let thr = t as f64 / 10.0;
                let best = curve
                    .iter()
                    .filter(|(r, _)| *r >= thr - 1e-12)
                    .map(|(_, p)| *p)
                    .fold(0.0f64, f64::max);
                sum += best;
            }
            sum / 11.0
        }
        ApProtocol::AllPoints => {
            // integrate max-future-precision over recall increments
            let mut area = 0.0;
            let mut prev = 0.0;
            for k in 0..curve.len() {
                let (r, _) = curve[k];
                if r > prev {
                    let peak = curve[k..].iter().map(|(_, p)| *p).fold(0.0f64, f64::max);
                    area += (r - prev) * peak;
                    prev = r;
                }
            }
            area
        }
    };
    Some(ap)
}

#[test]
fn criterion_2_eval_matches_oracle() {
    criterion(2, "mAP agrees with brute-force oracle", || {
        let start = std::time::Instant::now();
        let classes = ["car", "cat", "dog"];
        let mut r = rng::from_seed(0x0acce972);
        for case in 0..200 {
            let n_images = r.gen_range(1..=5);
            let n_classes = r.gen_range(1..=3);
            let mut gt = Vec::new();
            let mut total_boxes = 0;
            for i in 0..n_images {
                let mut objects = Vec::new();
                while total_boxes < 10 && objects.len() < 3 && r.gen_bool(0.7) {
                    let x1 = r.gen_range(0..80i64);
                    let y1 = r.gen_range(0..80i64);
                    let bbox = BoundingBox::new(
                        x1,
                        y1,
                        x1 + r.gen_range(4..80i64),
                        y1 + r.gen_range(4..80i64),
                    )
                    .unwrap();
                    let mut obj =
                        AnnotatedObject::new(classes[r.gen_range(0..n_classes)], bbox).unwrap();
                    obj.difficult = r.gen_bool(0.2);
                    objects.push(obj);
                    total_boxes += 1;
                }
                gt.push(ImageAnnotation {
                    image_id: format!("img{i}"),
                    width: 160,
                    height: 160,
                    depth: 3,
                    objects,
                });
            }
            let mut detections: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
            let mut score_step = 0;
            for class in &classes[..n_classes] {
                let mut dets = Vec::new();
                for i in 0..n_images {
                    for _ in 0..r.gen_range(0..=2) {
                        let x1 = r.gen_range(0..80i64);
                        let y1 = r.gen_range(0..80i64);
                        score_step += 1;
                        dets.push(Detection {
                            image_id: format!("img{i}"),
                            class_name: class.to_string(),
                            // unique scores: tie order is out of scope here
                            score: r.gen_range(0.0..1.0) + score_step as f64 * 1e-9,
                            bbox: BoundingBox::new(
                                x1,
                                y1,
                                x1 + r.gen_range(4..80i64),
                                y1 + r.gen_range(4..80i64),
                            )
                            .unwrap(),
                        });
                    }
                }
                detections.insert(class.to_string(), dets);
            }
            let config = EvalConfig {
                iou_threshold: 0.5,
                ap_protocol: if r.gen_bool(0.5) {
                    ApProtocol::ElevenPoint
                } else {
                    ApProtocol::AllPoints
                },
                size_filter: match r.gen_range(0..4) {
                    0 => None,
                    1 => Some(SizeClass::Small),
                    2 => Some(SizeClass::Medium),
                    _ => Some(SizeClass::Big),
                },
                cross_size_mode: if r.gen_bool(0.5) {
                    CrossSizeMode::Ignore
                } else {
                    CrossSizeMode::Strict
                },
            };
            let report = eval::evaluate(&detections, &gt, &config).map_err(|e| e.to_string())?;
            for class in &classes[..n_classes] {
                let oracle = oracle_class_ap(&detections[*class], &gt, class, &config);
                match oracle {
                    None => check(
                        report.excluded_classes.iter().any(|c| c == class),
                        &format!("case {case}: {class} should be excluded"),
                    )?,
                    Some(ap) => {
                        let got = report.per_class[*class].ap_percent / 100.0;
                        check(
                            (got - ap).abs() <= 1e-9,
                            &format!("case {case}: {class} AP {got} vs oracle {ap}"),
                        )?;
                    }
                }
            }
        }
        check(start.elapsed().as_secs() < 10, "runtime over 10 s")?;
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 3 & 4. Augmentation structural laws and class-switch uniformity.
// ---------------------------------------------------------------------------

fn flat_patch(class: &str, w: u32, h: u32, shade: u8, source: PatchSource) -> Patch {
    Patch {
        pixels: RgbImage::from_pixel(w, h, Rgb([shade, shade.wrapping_add(40), 200])),
        class_name: class.to_string(),
        source,
        id: format!("{class}-{w}x{h}"),
    }
}

/// VOC pool over all 20 classes plus a generated pool over the nine
/// DCGAN-backed classes, as the mixed strategies require.
fn full_pools() -> (ObjectPool, ObjectPool) {
    let mut voc_pool = ObjectPool::new();
    for (i, class) in VOC_CLASSES.iter().enumerate() {
        voc_pool.insert(flat_patch(class, 12, 10, i as u8 * 9, PatchSource::VocCrop));
        voc_pool.insert(flat_patch(
            class,
            20,
            16,
            i as u8 * 9 + 3,
            PatchSource::VocCrop,
        ));
    }
    let mut gen_pool = ObjectPool::new();
    for (i, class) in augment::GENERATED_CLASSES.iter().enumerate() {
        gen_pool.insert(flat_patch(
            class,
            32,
            32,
            i as u8 * 17,
            PatchSource::Generated,
        ));
    }
    (voc_pool, gen_pool)
}

/// A roomy image with 1-2 small objects: plenty of free space, so a placement
/// failure would be a real bug, not bad luck.
fn roomy_fixture(case: u64, r: &mut rng::Rng) -> (RgbImage, ImageAnnotation) {
    let classes = ["car", "bird", "sheep", "bottle", "horse"];
    let image = RgbImage::from_pixel(256, 256, Rgb([90, 100, 110]));
    let slots = [(12i64, 12i64), (210, 16), (14, 208)];
    let n = r.gen_range(1..=2);
    let mut objects = Vec::new();
    for (x, y) in slots.iter().take(n) {
        let w = r.gen_range(8..=20i64);
        let h = r.gen_range(8..=20i64);
        let bbox = BoundingBox::new(*x, *y, x + w - 1, y + h - 1).unwrap();
        objects.push(AnnotatedObject::new(classes[r.gen_range(0..classes.len())], bbox).unwrap());
    }
    let annotation = ImageAnnotation {
        image_id: format!("fx{case}"),
        width: 256,
        height: 256,
        depth: 3,
        objects,
    };
    (image, annotation)
}

fn check_layout(
    sample: &augment::AugmentedSample,
    original: &ImageAnnotation,
    what: &str,
) -> Result<(), String> {
    let mut boxes: Vec<BoundingBox> = original.objects.iter().map(|o| o.bbox).collect();
    for obj in &sample.annotation.objects {
        let b = obj.bbox;
        check(
            b.xmin >= 0
                && b.ymin >= 0
                && b.xmax < original.width as i64
                && b.ymax < original.height as i64,
            &format!("{what}: pasted box outside image"),
        )?;
        for prev in &boxes {
            check(!b.intersects(prev), &format!("{what}: overlapping paste"))?;
        }
        boxes.push(b);
    }
    Ok(())
}

#[test]
fn criterion_3_augmentation_structure() {
    criterion(3, "oversampling structural laws", || {
        let (voc_pool, gen_pool) = full_pools();
        let pools = Pools {
            voc: Some(&voc_pool),
            generated: Some(&gen_pool),
        };
        let policy = PlacementPolicy::default();
        let mut r = rng::from_seed(0x5712a3);
        for case in 0..500u64 {
            let (image, annotation) = roomy_fixture(case, &mut r);
            let n_small = annotation.objects.len() as u64;

            // strategy 1: one repetition, exactly ratio pastes per small object
            let s1 = StrategyConfig::preset(1).unwrap();
            let samples = augment::augment_image(&image, &annotation, &s1, &pools, &policy, case)
                .map_err(|e| e.to_string())?;
            check(
                samples.len() == 1,
                &format!("case {case}: strategy 1 sample count"),
            )?;
            for s in &samples {
                check(
                    s.failed_placements == 0,
                    &format!("case {case}: strategy 1 failure"),
                )?;
                check(
                    s.provenance.len() as u64 == 3 * n_small,
                    &format!("case {case}: strategy 1 paste count"),
                )?;
                check_layout(s, &annotation, &format!("case {case} strategy 1"))?;
            }

            // strategies 2-4: identical totals under identical seeds
            let mut totals = Vec::new();
            for id in 2..=4u32 {
                let cfg = StrategyConfig::preset(id).unwrap();
                let samples =
                    augment::augment_image(&image, &annotation, &cfg, &pools, &policy, case)
                        .map_err(|e| e.to_string())?;
                check(
                    samples.len() == 5,
                    &format!("case {case}: strategy {id} sample count"),
                )?;
                let mut total = 0u64;
                for s in &samples {
                    check(
                        s.failed_placements == 0,
                        &format!("case {case}: strategy {id} failure"),
                    )?;
                    total += s.provenance.len() as u64;
                    check_layout(s, &annotation, &format!("case {case} strategy {id}"))?;
                }
                totals.push(total);
            }
            check(
                totals[0] == totals[1] && totals[1] == totals[2] && totals[0] == 15 * n_small,
                &format!("case {case}: strategy 2-4 totals {totals:?}"),
            )?;

            // strategy 5: 15 repetitions when a low-count class is present,
            // 10 otherwise
            let s5 = StrategyConfig::preset(5).unwrap();
            let expected_reps = if annotation
                .objects
                .iter()
                .any(|o| LOW_COUNT_CLASSES.contains(&o.class_name.as_str()))
            {
                15
            } else {
                10
            };
            let samples = augment::augment_image(&image, &annotation, &s5, &pools, &policy, case)
                .map_err(|e| e.to_string())?;
            check(
                samples.len() == expected_reps,
                &format!("case {case}: strategy 5 sample count {}", samples.len()),
            )?;
            for s in &samples {
                check(
                    s.failed_placements == 0,
                    &format!("case {case}: strategy 5 failure"),
                )?;
                check(
                    s.provenance.len() as u64 == 3 * n_small,
                    &format!("case {case}: strategy 5 paste count"),
                )?;
                check_layout(s, &annotation, &format!("case {case} strategy 5"))?;
            }
        }
        Ok(Verdict::Pass)
    });
}

#[test]
fn criterion_4_class_switch_uniformity() {
    criterion(4, "class switching evens the class balance", || {
        // 10:1 skew between two classes on one roomy image
        let image = RgbImage::from_pixel(600, 600, Rgb([80, 80, 80]));
        let mut objects = Vec::new();
        for i in 0..11i64 {
            let x = 20 + (i % 4) * 140;
            let y = 20 + (i / 4) * 140;
            let bbox = BoundingBox::new(x, y, x + 13, y + 13).unwrap();
            let class = if i == 0 { "bird" } else { "car" };
            objects.push(AnnotatedObject::new(class, bbox).unwrap());
        }
        let annotation = ImageAnnotation {
            image_id: "skewed".into(),
            width: 600,
            height: 600,
            depth: 3,
            objects,
        };
        let (voc_pool, _) = full_pools();
        let pools = Pools {
            voc: Some(&voc_pool),
            generated: None,
        };
        let policy = PlacementPolicy::default();

        let s2 = StrategyConfig::preset(2).unwrap();
        let mut s3 = StrategyConfig::preset(3).unwrap();
        // switching draws uniformly from the target set; restrict it to the
        // two fixture classes so the comparison is exactly about balance
        s3.switch_target_classes = ["car", "bird"].iter().map(|s| s.to_string()).collect();

        for seed in 0..20u64 {
            let ratio_of = |cfg: &StrategyConfig| -> Result<f64, String> {
                let samples =
                    augment::augment_image(&image, &annotation, cfg, &pools, &policy, seed)
                        .map_err(|e| e.to_string())?;
                let mut counts: BTreeMap<String, u64> = BTreeMap::new();
                for s in &samples {
                    for rec in &s.provenance {
                        *counts.entry(rec.final_class.clone()).or_default() += 1;
                    }
                }
                let max = *counts.values().max().unwrap();
                let min = *counts.values().min().unwrap();
                Ok(max as f64 / min as f64)
            };
            let (r2, r3) = (ratio_of(&s2)?, ratio_of(&s3)?);
            check(
                r3 < r2,
                &format!("seed {seed}: switch ratio {r3:.2} not below {r2:.2}"),
            )?;
        }
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 5. Adversarial objective correctness.
// ---------------------------------------------------------------------------

fn check_gradient(analytic: &[f64], numeric: &[f64], what: &str) -> Result<(), String> {
    let err = gan::gradient_relative_error(analytic, numeric);
    check(err <= 1e-5, &format!("{what}: gradient error {err:.3e}"))
}

fn flatten_params(p: &ToyModelParams) -> Vec<f64> {
    let mut flat = Vec::new();
    for row in &p.gen_matrix {
        flat.extend(row);
    }
    for row in &p.gen_condition_matrix {
        flat.extend(row);
    }
    flat.extend(&p.gen_bias);
    flat
}

fn unflatten_params(template: &ToyModelParams, flat: &[f64]) -> ToyModelParams {
    let mut p = template.clone();
    let mut k = 0;
    for row in p
        .gen_matrix
        .iter_mut()
        .chain(p.gen_condition_matrix.iter_mut())
    {
        for v in row.iter_mut() {
            *v = flat[k];
            k += 1;
        }
    }
    for v in p.gen_bias.iter_mut() {
        *v = flat[k];
        k += 1;
    }
    p
}

#[test]
fn criterion_5_objective_gradients() {
    criterion(5, "objective values and gradients", || {
        let mut r = rng::from_seed(0x9a2);

        // exact identities first
        let flipped = gan::discriminator_loss_la(0.5, 0.5, LaMode::SignFlipped).unwrap();
        check(
            flipped == 0.0,
            &format!("sign-flipped loss at (0.5,0.5) is {flipped}"),
        )?;
        let default = gan::discriminator_loss_la(0.5, 0.5, LaMode::Default).unwrap();
        check(
            (default - 2.0 * std::f64::consts::LN_2).abs() <= 1e-12,
            &format!("default loss at (0.5,0.5) is {default}"),
        )?;
        for _ in 0..100 {
            let n = r.gen_range(1..=6);
            let a: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
            let b: Vec<f64> = (0..n).map(|_| r.gen_range(0.01..0.99)).collect();
            // zero generator: the conditional objective must reduce to the
            // plain minimax value bit for bit
            let v1 = gan::residual_gan_value(&a, &b).unwrap();
            let v2 = gan::minimax_value(&a, &b).unwrap();
            check(
                v1.to_bits() == v2.to_bits(),
                "conditional value differs from minimax",
            )?;
        }

        // pointwise losses vs central differences
        for mode in [LaMode::Default, LaMode::SignFlipped] {
            for i in 0..100 {
                let point = [r.gen_range(0.05..0.95), r.gen_range(0.05..0.95)];
                let numeric = gan::central_difference_gradient(
                    |v| gan::discriminator_loss_la(v[0], v[1], mode).unwrap(),
                    &point,
                    1e-5,
                );
                let (g0, g1) = gan::discriminator_loss_la_grad(point[0], point[1], mode).unwrap();
                check_gradient(&[g0, g1], &numeric, &format!("disc loss point {i}"))?;
            }
        }
        for i in 0..100 {
            let point = [r.gen_range(0.05..0.95)];
            let numeric = gan::central_difference_gradient(
                |v| gan::generator_loss(v[0]).unwrap(),
                &point,
                1e-5,
            );
            let g = gan::generator_loss_grad(point[0]).unwrap();
            check_gradient(&[g], &numeric, &format!("gen loss point {i}"))?;
        }

        // full-batch toy-model gradients vs central differences
        let dim = 3;
        for i in 0..100 {
            let mut params = ToyModelParams::init(dim, &mut r);
            for row in params
                .gen_matrix
                .iter_mut()
                .chain(params.gen_condition_matrix.iter_mut())
            {
                for v in row.iter_mut() {
                    *v = r.gen_range(-0.5..0.5);
                }
            }
            for v in params.gen_bias.iter_mut() {
                *v = r.gen_range(-0.5..0.5);
            }
            let draw = |r: &mut rng::Rng| -> Vec<Vec<f64>> {
                (0..4)
                    .map(|_| (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
                    .collect()
            };
            let large = draw(&mut r);
            let small = draw(&mut r);
            let conditions = if i % 2 == 0 { Some(draw(&mut r)) } else { None };
            let batch = Batch {
                large: &large,
                small: &small,
                conditions: conditions.as_deref(),
            };

            // discriminator parameters: (w, c)
            let mut flat_d: Vec<f64> = params.disc_weights.clone();
            flat_d.push(params.disc_bias);
            let numeric = gan::central_difference_gradient(
                |v| {
                    let mut p = params.clone();
                    p.disc_weights = v[..dim].to_vec();
                    p.disc_bias = v[dim];
                    gan::disc_loss(&p, &batch).unwrap()
                },
                &flat_d,
                1e-5,
            );
            let (gw, gc) = gan::disc_grad(&params, &batch).unwrap();
            let mut analytic = gw;
            analytic.push(gc);
            check_gradient(&analytic, &numeric, &format!("disc batch point {i}"))?;

            // generator parameters: (A, C, b)
            let flat_g = flatten_params(&params);
            let numeric = gan::central_difference_gradient(
                |v| gan::gen_loss(&unflatten_params(&params, v), &batch).unwrap(),
                &flat_g,
                1e-5,
            );
            let (ga, gcm, gb) = gan::gen_grad(&params, &batch).unwrap();
            let mut analytic = Vec::new();
            for row in ga.iter().chain(gcm.iter()) {
                analytic.extend(row);
            }
            analytic.extend(&gb);
            check_gradient(&analytic, &numeric, &format!("gen batch point {i}"))?;
        }
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 6. Zero-mapping property of the toy residual trainer.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_zero_mapping() {
    criterion(6, "residual trainer zero-mapping", || {
        let d = 4;
        let n = 4096;
        let config = TrainingConfig::default();

        // identical distributions: the learned residual must stay near zero
        for seed in 0..10u64 {
            let start = std::time::Instant::now();
            let mut data_rng = rng::derive_stream(seed, "data", 0);
            let large = gan::gaussian_cluster(&vec![0.0; d], 1.0, n, &mut data_rng);
            let small = gan::gaussian_cluster(&vec![0.0; d], 1.0, n, &mut data_rng);
            let held = gan::gaussian_cluster(&vec![0.0; d], 1.0, n, &mut data_rng);
            let mut train_rng = rng::derive_stream(seed, "init", 0);
            let run = gan::toy_residual_training(&large, &small, None, &config, &mut train_rng)
                .map_err(|e| e.to_string())?;

            let mut mean = vec![0.0; d];
            for s in &held {
                for (m, v) in mean.iter_mut().zip(s) {
                    *m += v / held.len() as f64;
                }
            }
            let scale: f64 = held
                .iter()
                .map(|s| {
                    s.iter()
                        .zip(&mean)
                        .map(|(x, m)| (x - m) * (x - m))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / held.len() as f64;
            let norm: f64 = held
                .iter()
                .map(|x| {
                    run.params
                        .residual(x, None)
                        .unwrap()
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / held.len() as f64;
            check(
                norm <= 0.05 * scale,
                &format!("seed {seed}: residual norm {norm:.4} vs scale {scale:.4}"),
            )?;
            check(
                start.elapsed().as_secs() < 20,
                &format!("seed {seed}: runtime over 20 s"),
            )?;
        }

        // constant offset: the residual must recover it within 10%
        let offset = 2.0;
        for seed in 0..10u64 {
            let mut data_rng = rng::derive_stream(seed, "data", 0);
            let large = gan::gaussian_cluster(&vec![0.0; d], 0.5, n, &mut data_rng);
            let small: Vec<Vec<f64>> = large
                .iter()
                .map(|l| l.iter().map(|x| x - offset).collect())
                .collect();
            let held = gan::gaussian_cluster(&vec![-offset; d], 0.5, n, &mut data_rng);
            let mut train_rng = rng::derive_stream(seed, "init", 0);
            let run = gan::toy_residual_training(&large, &small, None, &config, &mut train_rng)
                .map_err(|e| e.to_string())?;
            let mut mean_out = vec![0.0; d];
            for x in &held {
                let r = run.params.residual(x, None).unwrap();
                for (m, v) in mean_out.iter_mut().zip(&r) {
                    *m += v / held.len() as f64;
                }
            }
            let err: f64 = mean_out
                .iter()
                .map(|v| (v - offset) * (v - offset))
                .sum::<f64>()
                .sqrt();
            let target = (d as f64).sqrt() * offset;
            check(
                err <= 0.1 * target,
                &format!("seed {seed}: offset error {err:.4} (target norm {target:.4})"),
            )?;
        }
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 7. Determinism of the seeded subcommands.
// ---------------------------------------------------------------------------

fn snapshot_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, prefix: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            let rel = path
                .strip_prefix(prefix)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            if path.is_dir() {
                walk(&path, prefix, out);
            } else {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn criterion_7_determinism() {
    criterion(7, "seeded runs are byte-identical", || {
        let bin = env!("CARGO_BIN_EXE_smallobj");
        let root = tempfile::tempdir().unwrap();
        let ann_dir = root.path().join("Annotations");
        let img_dir = root.path().join("JPEGImages");
        std::fs::create_dir_all(&ann_dir).unwrap();
        std::fs::create_dir_all(&img_dir).unwrap();
        for (i, class) in ["car", "bird", "sheep"].iter().enumerate() {
            let image = RgbImage::from_pixel(220, 220, Rgb([40 + 20 * i as u8, 90, 120]));
            let bbox = BoundingBox::new(10, 10, 27, 25).unwrap();
            let annotation = ImageAnnotation {
                image_id: format!("d{i}"),
                width: 220,
                height: 220,
                depth: 3,
                objects: vec![AnnotatedObject::new(class, bbox).unwrap()],
            };
            image.save(img_dir.join(format!("d{i}.png"))).unwrap();
            std::fs::write(
                ann_dir.join(format!("d{i}.xml")),
                write_annotation(&annotation).unwrap(),
            )
            .unwrap();
        }

        let mut runs = Vec::new();
        for run in 0..2 {
            let out = root.path().join(format!("aug{run}"));
            let status = Command::new(bin)
                .args(["augment", "--strategy", "2", "--seed", "11"])
                .arg("--annotations")
                .arg(&ann_dir)
                .arg("--images")
                .arg(&img_dir)
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            check(status.success(), "augment run failed")?;
            runs.push(snapshot_dir(&out));
        }
        check(runs[0] == runs[1], "augment outputs differ between runs")?;
        check(!runs[0].is_empty(), "augment produced no files")?;

        let mut runs = Vec::new();
        for run in 0..2 {
            let out = root.path().join(format!("gan{run}"));
            let status = Command::new(bin)
                .args([
                    "gan-demo",
                    "--seed",
                    "3",
                    "--iterations",
                    "60",
                    "--samples",
                    "64",
                ])
                .arg("--out")
                .arg(&out)
                .status()
                .unwrap();
            check(status.success(), "gan-demo run failed")?;
            runs.push(snapshot_dir(&out));
        }
        check(runs[0] == runs[1], "gan-demo outputs differ between runs")?;
        Ok(Verdict::Pass)
    });
}

// ---------------------------------------------------------------------------
// 8. Annotation round-trip identity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_roundtrip() {
    criterion(8, "annotation round-trip identity", || {
        let corpus =
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/annotations");
        let mut files: Vec<PathBuf> = std::fs::read_dir(&corpus)
            .map_err(|e| format!("{}: {e}", corpus.display()))?
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        check(
            files.len() == 50,
            &format!("expected 50 fixtures, found {}", files.len()),
        )?;
        for path in &files {
            let xml = std::fs::read_to_string(path).unwrap();
            let first = parse_annotation(&xml).map_err(|e| format!("{}: {e}", path.display()))?;
            let rewritten = write_annotation(&first).map_err(|e| e.to_string())?;
            let second = parse_annotation(&rewritten).map_err(|e| e.to_string())?;
            check(
                first == second,
                &format!("{} does not round-trip", path.display()),
            )?;
        }

        let mut r = rng::from_seed(0x8d71);
        for case in 0..1000 {
            let width = r.gen_range(30..1200u32);
            let height = r.gen_range(30..1200u32);
            let mut objects = Vec::new();
            for _ in 0..r.gen_range(0..8) {
                let x1 = r.gen_range(0..width as i64 - 1);
                let y1 = r.gen_range(0..height as i64 - 1);
                let bbox = BoundingBox::new(
                    x1,
                    y1,
                    r.gen_range(x1..width as i64),
                    r.gen_range(y1..height as i64),
                )
                .unwrap();
                let class = VOC_CLASSES[r.gen_range(0..VOC_CLASSES.len())];
                let mut obj = AnnotatedObject::new(class, bbox).unwrap();
                obj.difficult = r.gen_bool(0.3);
                obj.truncated = r.gen_bool(0.3);
                objects.push(obj);
            }
            let annotation = ImageAnnotation {
                image_id: format!("r{case}"),
                width,
                height,
                depth: 3,
                objects,
            };
            let xml = write_annotation(&annotation).map_err(|e| e.to_string())?;
            let parsed = parse_annotation(&xml).map_err(|e| e.to_string())?;
            check(
                parsed == annotation,
                &format!("random case {case} does not round-trip"),
            )?;
        }
        Ok(Verdict::Pass)
    });
}
