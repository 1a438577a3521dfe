use mrc_core::codec;
use mrc_core::eval::{mean_distance, ratio_r};
use mrc_core::features::detect_corners;
use mrc_core::gof::{candidates, filter_predict, gauss_stats, surviving_weights};
use mrc_core::gpr::{combine, predict_ensemble};
use mrc_core::imaging::DisplacementField;
use mrc_core::morph::{closing3, dilate_disk};
use mrc_core::mrc::{pearson, predict_plain, train, PairSeries};
use mrc_core::phantom::generate_phantom;
use mrc_core::tracking::Tracker;
use mrc_core::warp::{interpolate_at, warp_mask};
use mrc_core::{
    CornerParams, CornerSet, FlowSet, GprEnsemble, GprPairModel, Kernel, LkParams, MaskKind, MrcModel, PhantomConfig,
    SparseField, Vec2, VesselMask, WarpParams,
};
use proptest::prelude::*;

fn v2(r: f64) -> impl Strategy<Value = Vec2> {
    (-r..r, -r..r).prop_map(|(x, y)| Vec2::new(x, y))
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(128)
}

/// Random model with a positive weight in every row.
fn mrc_model(max_nv: usize, max_nn: usize) -> impl Strategy<Value = MrcModel> {
    (1..=max_nv, 1..=max_nn).prop_flat_map(|(nv, nn)| {
        (
            prop::collection::vec(prop::option::weighted(0.8, 0.01f64..1.0), nv * nn),
            prop::collection::vec(v2(3.0), nv * nn),
            prop::collection::vec(v2(5.0), nv * nn),
            prop::collection::vec(v2(100.0), nv),
            prop::collection::vec(v2(100.0), nn),
            0.01f64..1.0,
        )
            .prop_map(move |(raw, slopes, intercepts, cv, cn, rho)| {
                let mut w: Vec<f64> = raw.iter().map(|o| o.unwrap_or(0.0)).collect();
                for i in 0..nv {
                    let row = &mut w[i * nn..(i + 1) * nn];
                    if row.iter().all(|x| *x == 0.0) {
                        row[0] = 1.0;
                    }
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|x| *x /= s);
                }
                MrcModel::from_parts(w, slopes, intercepts, rho, CornerSet::new(cv, cn)).unwrap()
            })
    })
}

fn live_flow(nn: usize) -> impl Strategy<Value = FlowSet> {
    (prop::collection::vec(v2(20.0), nn), prop::collection::vec(prop::bool::weighted(0.85), nn))
        .prop_map(|(d, mut valid)| {
            valid[0] = true;
            FlowSet::new(d, valid, 7)
        })
}

fn model_and_live(max_nv: usize, max_nn: usize) -> impl Strategy<Value = (MrcModel, FlowSet)> {
    mrc_model(max_nv, max_nn).prop_flat_map(|m| {
        let nn = m.n_non_vascular();
        (Just(m), live_flow(nn))
    })
}

fn blob_mask(w: usize, h: usize, margin: usize) -> impl Strategy<Value = VesselMask> {
    prop::collection::vec((margin..w - margin, margin..h - margin, 0usize..3), 1..6).prop_map(move |blobs| {
        let mut m = VesselMask::empty(w, h, MaskKind::Mask);
        for (cx, cy, r) in blobs {
            let mut seed = VesselMask::empty(w, h, MaskKind::Mask);
            seed.set(cx, cy, true);
            for (x, y) in dilate_disk(&seed, r).points() {
                m.set(x, y, true);
            }
        }
        m
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn pearson_is_bounded(
        data in (3usize..16).prop_flat_map(|k| (
            prop::collection::vec(v2(50.0), k),
            prop::collection::vec(v2(50.0), k),
            prop::collection::vec(prop::bool::weighted(0.8), k),
        ))
    ) {
        let (xs, ys, valid_frames) = data;
        if let Some(r) = pearson(&PairSeries { xs, ys, valid_frames }) {
            prop_assert!(r.is_finite() && (-1.0..=1.0).contains(&r), "rho = {r}");
        }
    }

    #[test]
    fn pearson_affine_invariant(
        xs in prop::collection::vec(v2(10.0), 3..12),
        noise in prop::collection::vec(v2(1.0), 12),
        scale in 0.1f64..10.0,
        shift in v2(5.0),
    ) {
        let ys: Vec<Vec2> = xs.iter().zip(&noise).map(|(x, n)| *x * 0.7 + *n).collect();
        let base = pearson(&PairSeries::new(xs.clone(), ys.clone()));
        let moved: Vec<Vec2> = xs.iter().map(|x| *x * scale + shift).collect();
        let other = pearson(&PairSeries::new(moved, ys));
        match (base, other) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn trained_rows_are_stochastic(
        dims in (1usize..4, 1usize..6, 3usize..10),
        seed_vals in prop::collection::vec(-10.0f64..10.0, 200),
        rho_th in 0.1f64..0.95,
    ) {
        let (nv, nn, k) = dims;
        let mut it = seed_vals.iter().cycle().copied();
        let mut next = || it.next().unwrap();
        let train_n: Vec<FlowSet> = (0..k).map(|_| FlowSet::exact((0..nn).map(|_| Vec2::new(next(), next())).collect(), 0)).collect();
        let train_v: Vec<FlowSet> = (0..k)
            .map(|m| {
                let base = train_n[m].displacements[0];
                FlowSet::exact((0..nv).map(|i| base * (1.0 + i as f64) + Vec2::new(0.05 * next(), 0.05 * next())).collect(), 0)
            })
            .collect();
        let corners = CornerSet::new(vec![Vec2::ZERO; nv], vec![Vec2::ZERO; nn]);
        if let Ok(m) = train(&train_v, &train_n, &corners, rho_th) {
            for i in 0..nv {
                let row = m.weight_row(i);
                prop_assert!(row.iter().all(|w| *w >= 0.0));
                let s: f64 = row.iter().sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9, "row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn gof_output_in_survivor_box((model, live) in model_and_live(4, 20)) {
        let r = filter_predict(&model, &live).unwrap();
        for i in 0..model.n_vascular() {
            let Some(out) = r.flow.get(i) else { continue };
            let cands = candidates(&model, &live, i).unwrap();
            let stats = gauss_stats(&cands).unwrap();
            let (weights, _) = surviving_weights(&model, &cands, &stats, i);
            let kept: Vec<Vec2> = match &weights {
                Some(w) => (0..w.len()).filter(|&j| w[j] > 0.0).map(|j| cands.predictions[j]).collect(),
                None => cands.active_predictions().collect(),
            };
            if let Some(w) = &weights {
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let tol = 1e-9 * (1.0 + out.norm());
            for axis in 0..2 {
                let lo = kept.iter().map(|p| p.axis(axis)).fold(f64::INFINITY, f64::min);
                let hi = kept.iter().map(|p| p.axis(axis)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.axis(axis) >= lo - tol && out.axis(axis) <= hi + tol);
            }
        }
    }

    #[test]
    fn gof_without_outliers_is_plain((model, live) in model_and_live(4, 9)) {
        // With at most 9 candidates no point can sit 3 sigma from the mean.
        let r = filter_predict(&model, &live).unwrap();
        prop_assert!(r.deleted.iter().all(|d| *d == 0));
        let plain = predict_plain(&model, &live).unwrap();
        prop_assert_eq!(r.flow, plain);
    }

    #[test]
    fn gof_no_deletion_means_plain((model, live) in model_and_live(3, 24)) {
        let r = filter_predict(&model, &live).unwrap();
        let plain = predict_plain(&model, &live).unwrap();
        for i in 0..model.n_vascular() {
            if r.deleted[i] == 0 {
                prop_assert_eq!(r.flow.get(i), plain.get(i));
            }
        }
    }

    #[test]
    fn warp_zero_field_is_closing(
        mask in blob_mask(40, 32, 0),
        anchors in prop::collection::vec(v2(40.0), 1..6),
        k in 1usize..6,
    ) {
        let n = anchors.len();
        let f = SparseField::new(anchors, vec![Vec2::ZERO; n], vec![true; n]).unwrap();
        let out = warp_mask(&mask, &f, &WarpParams { k, power: 2.0 }).unwrap();
        prop_assert_eq!(out, closing3(&mask));
    }

    #[test]
    fn warp_integer_shift_translates(
        mask in blob_mask(48, 48, 10),
        dx in -5isize..=5,
        dy in -5isize..=5,
        anchors in prop::collection::vec(v2(48.0), 1..6),
    ) {
        let n = anchors.len();
        let shift = Vec2::new(dx as f64, dy as f64);
        let f = SparseField::new(anchors, vec![shift; n], vec![true; n]).unwrap();
        let out = warp_mask(&mask, &f, &WarpParams::default()).unwrap();
        prop_assert_eq!(out, closing3(&mask).translated(dx, dy));
    }

    #[test]
    fn idw_stays_in_vector_box(
        anchors in prop::collection::vec((v2(50.0), v2(10.0)), 1..8),
        points in prop::collection::vec(v2(60.0), 1..10),
        k in 1usize..8,
        power in 0.5f64..4.0,
    ) {
        let (pos, vecs): (Vec<Vec2>, Vec<Vec2>) = anchors.into_iter().unzip();
        let n = pos.len();
        let f = SparseField::new(pos, vecs.clone(), vec![true; n]).unwrap();
        for d in interpolate_at(&f, &points, &WarpParams { k, power }).unwrap() {
            for axis in 0..2 {
                let lo = vecs.iter().map(|p| p.axis(axis)).fold(f64::INFINITY, f64::min);
                let hi = vecs.iter().map(|p| p.axis(axis)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(d.axis(axis) >= lo - 1e-9 && d.axis(axis) <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn mrc_codec_round_trip(model in mrc_model(5, 7)) {
        let bytes = codec::encode_mrc(&model);
        let back = codec::decode_mrc(&bytes).unwrap();
        prop_assert_eq!(codec::encode_mrc(&back), bytes);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn flow_codec_round_trip(
        dims in (1usize..6, 1usize..6, 0usize..4),
        vals in prop::collection::vec(any::<f64>(), 2 * 36 * 3),
    ) {
        let (w, h, frames) = dims;
        let mut it = vals.chunks(2).cycle();
        let fields: Vec<DisplacementField> = (0..frames)
            .map(|_| DisplacementField { width: w, height: h, vectors: (0..w * h).map(|_| { let c = it.next().unwrap(); Vec2::new(c[0], c[1]) }).collect() })
            .collect();
        let bytes = codec::encode_flows(&fields).unwrap();
        let back = codec::decode_flows(&bytes).unwrap();
        prop_assert_eq!(codec::encode_flows(&back).unwrap(), bytes);
    }

    #[test]
    fn gpr_codec_round_trip(e in ensemble(3, 3)) {
        let bytes = codec::encode_gpr(&e);
        let back = codec::decode_gpr(&bytes).unwrap();
        prop_assert_eq!(codec::encode_gpr(&back), bytes);
        prop_assert_eq!(back, e);
    }

    #[test]
    fn gpr_deletion_is_monotone(
        (e, live) in ensemble(3, 4).prop_flat_map(|e| { let nn = e.n_non_vascular(); (Just(e), live_flow(nn)) }),
        t in (0.0f64..2.0, 0.0f64..2.0),
    ) {
        let (lo, hi) = if t.0 <= t.1 { t } else { (t.1, t.0) };
        let at = |th: f64| {
            let g = GprEnsemble::from_parts(e.models().to_vec(), e.corners.clone(), th, e.sigma_n, e.kernel).unwrap();
            predict_ensemble(&g, &live).unwrap()
        };
        let (strict, loose) = (at(lo), at(hi));
        for i in 0..e.n_vascular() {
            prop_assert!(!loose.deleted[i] || strict.deleted[i]);
            prop_assert!(!strict.flow.valid[i] || loose.flow.valid[i]);
        }
    }

    #[test]
    fn gpr_variance_within_prior(
        xs in prop::collection::vec(-5.0f64..5.0, 1..8),
        ys in prop::collection::vec(-5.0f64..5.0, 8),
        c in 0.01f64..10.0,
        eta in 0.1f64..5.0,
        sigma_n in 0.0f64..0.5,
        probe in -10.0f64..10.0,
        squared in any::<bool>(),
    ) {
        let kernel = if squared { Kernel::Squared } else { Kernel::Exponential };
        let n = xs.len();
        let m = GprPairModel::new(xs, ys[..n].to_vec(), c, eta, sigma_n, kernel).unwrap();
        let (mean, var) = m.predict(probe);
        prop_assert!(mean.is_finite());
        prop_assert!((0.0..=c * (1.0 + 1e-12)).contains(&var), "var {var}, c {c}");
    }

    #[test]
    fn combined_weights_normalized(preds in prop::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 1..30)) {
        let c = combine(&preds).unwrap();
        prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(c.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn ratio_monotone_and_md_scales(
        gt in blob_mask(32, 32, 0),
        warped in blob_mask(32, 32, 0),
        extra in blob_mask(32, 32, 0),
        spacing in 0.01f64..4.0,
    ) {
        let mut gt = gt;
        gt.kind = MaskKind::Centerline;
        let mut grown = warped.clone();
        for (x, y) in extra.points() {
            grown.set(x, y, true);
        }
        prop_assert!(ratio_r(&gt, &grown).unwrap() >= ratio_r(&gt, &warped).unwrap());
        let a = mean_distance(&gt, &warped, spacing).unwrap();
        let b = mean_distance(&gt, &warped, 2.0 * spacing).unwrap();
        prop_assert_eq!(b, 2.0 * a);
        prop_assert!(a >= 0.0);
    }
}

fn ensemble(max_nv: usize, max_nn: usize) -> impl Strategy<Value = GprEnsemble> {
    let pair = prop::option::weighted(
        0.8,
        (prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..6), 0.1f64..3.0, 0.3f64..3.0),
    );
    (1..=max_nv, 1..=max_nn, 0.001f64..0.3, any::<bool>(), 0.0f64..3.0).prop_flat_map(move |(nv, nn, sigma_n, squared, th)| {
        (prop::collection::vec(pair.clone(), nv * nn * 2), prop::collection::vec(v2(50.0), nv + nn)).prop_map(move |(models, pts)| {
            let kernel = if squared { Kernel::Squared } else { Kernel::Exponential };
            let models = models
                .into_iter()
                .map(|m| {
                    m.map(|(xy, c, eta)| {
                        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
                        GprPairModel::new(x, y, c, eta, sigma_n, kernel).unwrap()
                    })
                })
                .collect();
            let corners = CornerSet::new(pts[..nv].to_vec(), pts[nv..].to_vec());
            GprEnsemble::from_parts(models, corners, th, sigma_n, kernel).unwrap()
        })
    })
}

fn small_phantom(seed: u64) -> mrc_core::PhantomDataset {
    let cfg = PhantomConfig { width: 64, height: 64, amplitude_px: 0.0, contrasted_frames: 1, live_frames: 0, seed, ..Default::default() };
    generate_phantom(&cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lk_zero_motion_is_fixed_point(seed in 0u64..1000, pts in prop::collection::vec((12.0f64..52.0, 12.0f64..52.0), 1..12)) {
        let ds = small_phantom(seed);
        let reference = ds.sequence.reference();
        let corners: Vec<Vec2> = pts.iter().map(|(x, y)| Vec2::new(*x, *y)).collect();
        let flow = Tracker::new(reference, &LkParams::default()).unwrap().track(reference, &corners).unwrap();
        for j in 0..flow.len() {
            if flow.valid[j] {
                prop_assert_eq!(flow.displacements[j], Vec2::ZERO);
            }
        }
    }

    #[test]
    fn lk_validity_monotone_in_threshold(
        seed in 0u64..1000,
        pts in prop::collection::vec((4.0f64..60.0, 4.0f64..60.0), 1..10),
        ths in (0.0f64..1e-3, 0.0f64..1e-3),
        shift in v2(2.0),
    ) {
        let cfg = PhantomConfig { width: 64, height: 64, amplitude_px: 0.0, contrasted_frames: 1, live_frames: 0, seed, ..Default::default() };
        let ds = generate_phantom(&cfg).unwrap();
        let reference = ds.sequence.reference();
        let cur = mrc_core::Frame::new(64, 64, (0..64 * 64).map(|i| reference.sample_clamped((i % 64) as f64 - shift.x, (i / 64) as f64 - shift.y)).collect()).unwrap();
        let (lo, hi) = if ths.0 <= ths.1 { ths } else { (ths.1, ths.0) };
        let corners: Vec<Vec2> = pts.iter().map(|(x, y)| Vec2::new(*x, *y)).collect();
        let track = |th: f64| {
            let p = LkParams { min_eig_threshold: th, ..LkParams::default() };
            Tracker::new(reference, &p).unwrap().track(&cur, &corners).unwrap()
        };
        let (a, b) = (track(lo), track(hi));
        for j in 0..corners.len() {
            prop_assert!(!b.valid[j] || a.valid[j]);
        }
    }

    #[test]
    fn corners_partition_and_spacing(seed in 0u64..1000, q in 0.01f64..0.3, dq in 0.0f64..0.3, min_distance in 2.0f64..12.0) {
        let cfg = PhantomConfig { width: 96, height: 96, amplitude_px: 0.0, contrasted_frames: 1, live_frames: 0, seed, ..Default::default() };
        let ds = generate_phantom(&cfg).unwrap();
        let params = CornerParams { quality_level: q, min_distance, ..CornerParams::default() };
        let Ok(c) = detect_corners(ds.sequence.reference(), &ds.reference_mask, &params) else { return Ok(()) };
        let grown = dilate_disk(&ds.reference_mask, params.mask_dilation);
        prop_assert!(c.vascular.iter().all(|p| grown.get(p.x as usize, p.y as usize)));
        prop_assert!(c.non_vascular.iter().all(|p| !grown.get(p.x as usize, p.y as usize)));
        for set in [&c.vascular, &c.non_vascular] {
            for a in 0..set.len() {
                for b in a + 1..set.len() {
                    prop_assert!((set[a] - set[b]).norm() >= min_distance);
                }
            }
        }
        let higher = CornerParams { quality_level: (q + dq).min(0.99), ..params };
        if let Ok(h) = detect_corners(ds.sequence.reference(), &ds.reference_mask, &higher) {
            prop_assert!(h.vascular.iter().all(|p| c.vascular.contains(p)));
            prop_assert!(h.non_vascular.iter().all(|p| c.non_vascular.contains(p)));
        }
    }
}
