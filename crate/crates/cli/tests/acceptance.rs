//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Every check compares against an oracle written
//! here, not against the library's own helpers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hand2robot::augment::{
    augment_episode, rasterize_mesh, AugmentConfig, AugmentError, AugmentMode, HandPart, MeshTopology, PartFilter,
    NEAR_PLANE,
};
use hand2robot::calibration::CameraModel;
use hand2robot::dataset::{
    decode_f32, read_episode_meta, read_manifest, validate_dataset, write_dataset, Dataset, Episode, FindingKind,
    ManifestEntry, StateRow, View, FORMAT_VERSION, MANIFEST_FILE,
};
use hand2robot::dataset::DatasetManifest;
use hand2robot::geometry::GeometryError;
use hand2robot::hand::{keypoints, Handedness, HandFrame, HandTrack, NUM_KEYPOINTS};
use hand2robot::kinematics::{forward_kinematics, jacobian, validate_poses_independent, IkOptions, KinematicChain};
use hand2robot::mixer::{build_index, build_schedule, next_batch, schedule_to_string, BatchStream, MixPlan};
use hand2robot::retarget::{
    calibrate_gripper, gripper_state, hand_orientation, retarget_track, Embodiment, GripperCalibration,
    RetargetOptions,
};
use hand2robot::rng::stream;
use hand2robot::synth::{demo_camera, demo_camera_pose, grasp_episode, hand_at_pose, GraspSpec};
use hand2robot::{Execution, RigidTransform, UnitQuaternion, Vec3};
use hand2robot_cli::cmd::demo::DemoSpec;
use hand2robot_cli::{cmd_augment, cmd_retarget, cmd_validate, write_demo, LoadedConfig, RunOptions};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ----- independent rotation helpers ---------------------------------------

type Mat3 = [[f64; 3]; 3];

fn quat_to_mat(q: [f64; 4]) -> Mat3 {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn rodrigues(axis: [f64; 3], angle: f64) -> Mat3 {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let k = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let kk: f64 = (0..3).map(|m| kx[i][m] * kx[m][j]).sum();
            r[i][j] = if i == j { 1.0 } else { 0.0 } + s * kx[i][j] + (1.0 - c) * kk;
        }
    }
    r
}

/// Angle between two rotations from the Frobenius distance,
/// `‖A − B‖_F = 2√2 · sin(θ/2)`.
fn mat_angle(a: &Mat3, b: &Mat3) -> f64 {
    let f: f64 = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (a[i][j] - b[i][j]).powi(2))
        .sum::<f64>()
        .sqrt();
    2.0 * (f / (2.0 * 2f64.sqrt())).min(1.0).asin()
}

fn quat_angle(a: UnitQuaternion, b: UnitQuaternion) -> f64 {
    mat_angle(&quat_to_mat(a.to_array()), &quat_to_mat(b.to_array()))
}

fn random_axis(r: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
        let n2 = v.iter().map(|x| x * x).sum::<f64>();
        if n2 > 1e-3 && n2 <= 1.0 {
            return v;
        }
    }
}

fn random_quat(r: &mut ChaCha8Rng) -> UnitQuaternion {
    UnitQuaternion::from_axis_angle(Vec3::from_array(random_axis(r)), r.random_range(0.0..std::f64::consts::PI))
        .unwrap()
}

fn random_rigid(r: &mut ChaCha8Rng) -> RigidTransform {
    let t = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    RigidTransform::from_quat_translation(random_quat(r), t)
}

fn frame_with_tips(thumb: Vec3, index: Vec3) -> HandFrame {
    let mut k = [Vec3::ZERO; NUM_KEYPOINTS];
    k[keypoints::THUMB_TIP] = thumb;
    k[keypoints::INDEX_TIP] = index;
    HandFrame {
        timestamp: 0.0,
        keypoints: k,
        vertices: None,
        confidence: 1.0,
        handedness: Handedness::Right,
    }
}

// ----- 1 ---------------------------------------------------------------------

fn gripper_contract() -> Outcome {
    let mut r = stream(1, "acceptance-gripper", 0);
    let mut n = 0;
    for _ in 0..100 {
        let d_min = r.random_range(0.001..0.1);
        let d_max = d_min + r.random_range(1e-4..0.15);
        let cal = GripperCalibration::new(d_min, d_max).map_err(|e| e.to_string())?;
        let mut ds: Vec<f64> = (0..100).map(|_| r.random_range(0.0..0.3)).collect();
        ds.sort_by(f64::total_cmp);
        let mut prev = f64::NEG_INFINITY;
        for d in ds {
            let expected = ((d - d_min) / (d_max - d_min)).clamp(0.0, 1.0);
            let g = gripper_state(&frame_with_tips(Vec3::new(d, 0.0, 0.0), Vec3::ZERO), &cal);
            ensure(g.to_bits() == expected.to_bits(), || {
                format!("d={d} d_min={d_min} d_max={d_max}: {g} != {expected}")
            })?;
            ensure((0.0..=1.0).contains(&g), || format!("{g} outside [0, 1]"))?;
            ensure(g >= prev, || format!("not monotone at d={d}"))?;
            prev = g;
            n += 1;
        }
    }
    Ok(format!("{n} samples exact"))
}

// ----- 2 ---------------------------------------------------------------------

fn random_track(r: &mut ChaCha8Rng, frames: usize) -> HandTrack {
    let anchor = Vec3::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), r.random_range(0.4..0.9));
    let q0 = random_quat(r);
    let spin = Vec3::from_array(random_axis(r)) * 0.05;
    let frames = (0..frames)
        .map(|i| {
            let q = q0.mul(UnitQuaternion::from_rotation_vector(spin * i as f64));
            let drift = Vec3::new(0.01, -0.005, 0.003) * i as f64;
            let mut f = hand_at_pose(anchor + drift, q, r.random_range(0.02..0.09));
            for p in f.keypoints.iter_mut() {
                *p = *p + Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)) * 0.002;
            }
            f.vertices = None;
            f.timestamp = i as f64 / 30.0;
            f
        })
        .collect();
    HandTrack::new(frames, 30.0, "cam").unwrap()
}

fn retarget_equivariance() -> Outcome {
    let mut r = stream(2, "acceptance-equivariance", 0);
    let transforms: Vec<RigidTransform> = (0..100).map(|_| random_rigid(&mut r)).collect();
    let tracks: Vec<HandTrack> = (0..100).map(|_| random_track(&mut r, 12)).collect();
    let cam_to_base = random_rigid(&mut r);
    let opts = RetargetOptions::default();
    let (mut dp, mut dr, mut dg) = (0.0f64, 0.0f64, 0.0f64);
    for track in &tracks {
        let cal = calibrate_gripper(track, 5.0, 95.0).map_err(|e| e.to_string())?;
        for g in &transforms {
            let moved = track.transformed(g);
            let cal_moved = calibrate_gripper(&moved, 5.0, 95.0).map_err(|e| e.to_string())?;
            let (a, _) = retarget_track(&moved, &cal_moved, &cam_to_base, &opts).map_err(|e| e.to_string())?;
            let (b, _) = retarget_track(track, &cal, &cam_to_base.compose(g), &opts).map_err(|e| e.to_string())?;
            ensure(a.len() == b.len(), || "lengths differ".into())?;
            for (pa, pb) in a.poses().iter().zip(b.poses()) {
                dp = dp.max(pa.position.distance(pb.position));
                dr = dr.max(quat_angle(pa.orientation, pb.orientation));
                dg = dg.max((pa.gripper - pb.gripper).abs());
            }
        }
    }
    ensure(dp <= 1e-7 && dr <= 1e-7 && dg <= 1e-12, || {
        format!("max errors {dp:.2e} m, {dr:.2e} rad, gripper {dg:.2e}")
    })?;
    Ok(format!("10000 pairs; max {dp:.1e} m, {dr:.1e} rad, gripper {dg:.1e}"))
}

// ----- 3 ---------------------------------------------------------------------

fn orientation_construction() -> Outcome {
    let q = hand_orientation(&hand_at_pose(Vec3::ZERO, UnitQuaternion::default(), 0.05)).map_err(|e| e.to_string())?;
    let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let e0 = mat_angle(&quat_to_mat(q.to_array()), &id);
    ensure(e0 <= 1e-6, || format!("canonical hand is {e0:.2e} rad from identity"))?;

    let mut r = stream(3, "acceptance-orientation", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let axis = random_axis(&mut r);
        let angle = r.random_range(0.0..std::f64::consts::PI);
        let applied = rodrigues(axis, angle);
        let q = UnitQuaternion::from_axis_angle(Vec3::from_array(axis), angle).unwrap();
        let anchor = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let frame = hand_at_pose(anchor, q, r.random_range(0.01..0.1));
        let got = hand_orientation(&frame).map_err(|e| e.to_string())?;
        worst = worst.max(mat_angle(&quat_to_mat(got.to_array()), &applied));
    }
    ensure(worst <= 1e-6, || format!("worst recovery error {worst:.2e} rad"))?;

    for _ in 0..100 {
        let origin = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        let dir = Vec3::from_array(random_axis(&mut r));
        let mut k = [Vec3::ZERO; NUM_KEYPOINTS];
        for p in k.iter_mut() {
            *p = origin + dir * r.random_range(-0.1..0.1);
        }
        let mut f = frame_with_tips(Vec3::ZERO, Vec3::ZERO);
        f.keypoints = k;
        match hand_orientation(&f) {
            Err(GeometryError::DegenerateFit) => {}
            other => return Err(format!("collinear hand gave {other:?}")),
        }
    }
    Ok(format!("identity {e0:.1e} rad; 1000 rotations, worst {worst:.1e} rad; 100 collinear rejected"))
}

// ----- 4 ---------------------------------------------------------------------

fn ik_soundness() -> Outcome {
    let chain = KinematicChain::so100_plus();
    let opts = IkOptions::default();
    ensure(opts.pos_tol == 1e-4 && opts.rot_tol == 1e-3, || "unexpected default tolerances".into())?;
    let mut r = stream(4, "acceptance-ik", 0);
    let random_q = |r: &mut ChaCha8Rng| -> Vec<f64> {
        chain.joints().iter().map(|j| r.random_range(j.limits[0]..=j.limits[1])).collect()
    };
    let targets: Vec<_> = (0..1000)
        .map(|_| {
            let t = forward_kinematics(&chain, &random_q(&mut r)).unwrap();
            (t.translation, hand2robot::geometry::quat_from_matrix(&t.rotation))
        })
        .collect();
    let report = validate_poses_independent(Execution::default(), &chain, &targets, &chain.mid_range(), &opts)
        .map_err(|e| e.to_string())?;
    let mut converged = 0;
    for (res, (p, q)) in report.results.iter().zip(&targets) {
        if !res.converged {
            continue;
        }
        converged += 1;
        ensure(chain.within_limits(&res.joints), || "solution outside joint limits".into())?;
        let fk = forward_kinematics(&chain, &res.joints).unwrap();
        let pe = fk.translation.distance(*p);
        let re = mat_angle(&fk.rotation.rows(), &quat_to_mat(q.to_array()));
        ensure(pe <= opts.pos_tol && re <= opts.rot_tol, || {
            format!("converged solution misses target by {pe:.2e} m / {re:.2e} rad")
        })?;
    }
    ensure(converged >= 950, || format!("{converged}/1000 converged"))?;

    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q = random_q(&mut r);
        let jac = jacobian(&chain, &q).map_err(|e| e.to_string())?;
        for i in 0..chain.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += h;
            qm[i] -= h;
            let tp = forward_kinematics(&chain, &qp).unwrap();
            let tm = forward_kinematics(&chain, &qm).unwrap();
            let lin = (tp.translation - tm.translation) / (2.0 * h);
            let (rp, rm) = (tp.rotation.rows(), tm.rotation.rows());
            // M = Rp·Rmᵀ ≈ I + 2h[ω]×
            let m: Mat3 = std::array::from_fn(|a| std::array::from_fn(|b| (0..3).map(|k| rp[a][k] * rm[b][k]).sum()));
            let ang = [
                (m[2][1] - m[1][2]) / 2.0 / (2.0 * h),
                (m[0][2] - m[2][0]) / 2.0 / (2.0 * h),
                (m[1][0] - m[0][1]) / 2.0 / (2.0 * h),
            ];
            let fd = [lin.x, lin.y, lin.z, ang[0], ang[1], ang[2]];
            for (row, v) in fd.iter().enumerate() {
                worst = worst.max((jac[(row, i)] - v).abs());
            }
        }
    }
    ensure(worst <= 1e-5, || format!("Jacobian differs from finite differences by {worst:.2e}"))?;
    Ok(format!("{converged}/1000 converged and verified; Jacobian max diff {worst:.1e}"))
}

// ----- 5 ---------------------------------------------------------------------

struct OracleVertex {
    x: i128,
    y: i128,
}

/// Brute-force coverage: every face tested at every pixel center with a
/// geometric top/left classification of each edge.
fn oracle_coverage(cam: &CameraModel, verts: &[Vec3], faces: &[[u32; 3]], keep: &[bool]) -> Option<Vec<Option<u32>>> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut best: Vec<Option<(u32, f64)>> = vec![None; w * h];
    let mut any = false;
    let project = |p: Vec3| -> Option<(OracleVertex, f64)> {
        if p.z <= NEAR_PLANE {
            return None;
        }
        let u = cam.fx * (p.x / p.z) + cam.cx;
        let v = cam.fy * (p.y / p.z) + cam.cy;
        Some((
            OracleVertex {
                x: (u * 256.0).round() as i128,
                y: (v * 256.0).round() as i128,
            },
            1.0 / p.z,
        ))
    };
    for (fi, face) in faces.iter().enumerate() {
        if !keep[fi] {
            continue;
        }
        let pv: Vec<_> = face.iter().filter_map(|&i| project(verts[i as usize])).collect();
        if pv.len() < 3 {
            continue;
        }
        any = true;
        let (a, b, c) = (&pv[0].0, &pv[1].0, &pv[2].0);
        let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if cross == 0 {
            continue;
        }
        // Order so that the signed area is positive.
        let order = if cross > 0 { [0, 1, 2] } else { [0, 2, 1] };
        let p: Vec<&OracleVertex> = order.iter().map(|&i| &pv[i].0).collect();
        let iz: Vec<f64> = order.iter().map(|&i| pv[i].1).collect();
        let area = cross.abs();
        // Edge opposite vertex k runs p[k+1] -> p[k+2].
        let top_left: Vec<bool> = (0..3)
            .map(|k| {
                let (e0, e1, other) = (p[(k + 1) % 3], p[(k + 2) % 3], p[k]);
                if e0.y == e1.y {
                    // horizontal: top when the triangle lies below it
                    other.y > e0.y
                } else {
                    // left when the triangle lies to its right
                    let num = (other.x - e0.x) * (e1.y - e0.y) - (e1.x - e0.x) * (other.y - e0.y);
                    num.signum() * (e1.y - e0.y).signum() > 0
                }
            })
            .collect();
        for y in 0..h {
            for x in 0..w {
                let px = ((x as i128) << 8) + 128;
                let py = ((y as i128) << 8) + 128;
                let mut wts = [0i128; 3];
                let mut inside = true;
                for k in 0..3 {
                    let (e0, e1) = (p[(k + 1) % 3], p[(k + 2) % 3]);
                    let e = (e1.x - e0.x) * (py - e0.y) - (e1.y - e0.y) * (px - e0.x);
                    wts[k] = e;
                    inside &= e > 0 || (e == 0 && top_left[k]);
                }
                if !inside {
                    continue;
                }
                let d = (wts[0] as f64 * iz[0] + wts[1] as f64 * iz[1] + wts[2] as f64 * iz[2]) / area as f64;
                let slot = &mut best[y * w + x];
                if slot.is_none_or(|(_, bd)| d > bd) {
                    *slot = Some((fi as u32, d));
                }
            }
        }
    }
    any.then(|| best.into_iter().map(|s| s.map(|(f, _)| f)).collect())
}

fn rasterizer_oracle() -> Outcome {
    let cam = CameraModel::new(60.0, 60.0, 32.0, 32.0, 64, 64).map_err(|e| e.to_string())?;
    let mut r = stream(5, "acceptance-raster", 0);
    let (mut covered, mut empty, mut edge_pixels) = (0usize, 0usize, 0usize);
    for m in 0..200 {
        let nv = r.random_range(3..=30);
        let verts: Vec<Vec3> = (0..nv)
            .map(|_| {
                let z = if r.random_bool(0.03) { r.random_range(-0.5..0.05) } else { r.random_range(0.5..2.0) };
                let mut u: f64 = r.random_range(-10.0..74.0);
                let mut v: f64 = r.random_range(-10.0..74.0);
                if r.random_bool(0.5) {
                    u = (u * 2.0).round() / 2.0;
                    v = (v * 2.0).round() / 2.0;
                }
                Vec3::new((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z)
            })
            .collect();
        let nf = r.random_range(1..=50);
        let mut faces: Vec<[u32; 3]> = (0..nf)
            .map(|_| {
                let mut idx: Vec<u32> = (0..nv as u32).collect();
                idx.shuffle(&mut r);
                [idx[0], idx[1], idx[2]]
            })
            .collect();
        // Pairs of faces sharing an edge exercise the tie rule.
        if nf >= 2 {
            let f = faces[0];
            let third = (0..nv as u32).find(|v| !f.contains(v)).unwrap_or(f[2]);
            faces[1] = [f[1], f[0], if nv > 3 { third } else { f[2] }];
        }
        let labels: Vec<HandPart> = (0..nv).map(|_| HandPart::ALL[r.random_range(0..6)]).collect();
        let parts: Vec<HandPart> = HandPart::ALL.iter().copied().filter(|_| r.random_bool(0.7)).collect();
        let filter = if m % 5 == 0 { PartFilter::all() } else { PartFilter::of(&parts) };
        let keep: Vec<bool> = faces
            .iter()
            .map(|f| f.iter().all(|&v| filter.contains(labels[v as usize])))
            .collect();
        let topo = MeshTopology::new(faces.clone(), labels).map_err(|e| e.to_string())?;
        let expected = oracle_coverage(&cam, &verts, &faces, &keep);
        match (rasterize_mesh(&cam, &verts, &topo, &filter), expected) {
            (Err(AugmentError::EmptyMesh), None) => empty += 1,
            (Ok(cov), Some(exp)) => {
                for y in 0..64u32 {
                    for x in 0..64u32 {
                        let want = exp[(y * 64 + x) as usize];
                        let got = cov.face_at(x, y);
                        ensure(got == want, || format!("mesh {m} pixel ({x},{y}): {got:?} != {want:?}"))?;
                        covered += want.is_some() as usize;
                    }
                }
                edge_pixels += verts.iter().filter(|v| (v.x / v.z * cam.fx + cam.cx).fract() == 0.5).count();
            }
            (got, want) => {
                return Err(format!("mesh {m}: rasterizer {:?}, oracle renderable {}", got.err(), want.is_some()))
            }
        }
    }
    ensure(covered > 0, || "no pixel covered".into())?;
    Ok(format!(
        "200 meshes; {covered} covered pixels identical, {empty} empty, {edge_pixels} centre-aligned vertices"
    ))
}

// ----- 6 ---------------------------------------------------------------------

fn augment_variants() -> Outcome {
    let chain = KinematicChain::so100_plus();
    let ep = grasp_episode(
        &chain,
        &demo_camera_pose(),
        &GraspSpec {
            frames: 50,
            seed: 6,
            ..Default::default()
        },
    );
    let cam = demo_camera();
    let topo = hand2robot::synth::hand_topology();
    let (mut nonempty, mut strict) = (0, 0);
    for (i, f) in ep.track.frames().iter().enumerate() {
        let verts = f.vertices.as_deref().ok_or("synthetic frame without mesh")?;
        let full = rasterize_mesh(&cam, verts, &topo, &PartFilter::all());
        let partial = rasterize_mesh(&cam, verts, &topo, &PartFilter::thumb_and_index());
        let (full, partial) = match (full, partial) {
            (Ok(a), Ok(b)) => (a, b),
            (a, b) => return Err(format!("frame {i}: {:?} / {:?}", a.err(), b.err())),
        };
        let (mut pf, mut ff) = (0, 0);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let p = partial.face_at(x, y).is_some();
                let q = full.face_at(x, y).is_some();
                ensure(!p || q, || format!("frame {i}: pixel ({x},{y}) in Partial but not Full"))?;
                pf += p as usize;
                ff += q as usize;
            }
        }
        nonempty += (pf > 0) as usize;
        strict += (ff > pf) as usize;
    }
    ensure(nonempty == 50 && strict == 50, || {
        format!("vacuous: Partial nonempty on {nonempty}, Full larger on {strict} of 50 frames")
    })?;

    let imgs: Vec<_> = (0..50).map(|i| hand2robot::synth::background_image(cam.width, cam.height, i)).collect();
    let cfg = AugmentConfig {
        mode: AugmentMode::None,
        ..Default::default()
    };
    let (out, _) = augment_episode(Execution::default(), &imgs, ep.track.frames(), &cam, Some(&topo), &cfg)
        .map_err(|e| e.to_string())?;
    ensure(out == imgs, || "mode None changed pixels".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_path = write_demo(
        dir.path(),
        &DemoSpec {
            frames: 20,
            robot_frames: 20,
            ..Default::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let mut cfg = LoadedConfig::load(&cfg_path).map_err(|e| e.to_string())?;
    cfg.config.augment.modes = vec![AugmentMode::None];
    let report = cmd_augment(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
    let src = dir.path().join("frames").join("grasp");
    let dst = PathBuf::from(&report.tracks[0].modes[0].output);
    let dst = if dst.is_absolute() { dst } else { cfg.resolve(&dst) };
    let a = tree(&src);
    let b = tree(&dst);
    ensure(!a.is_empty() && a == b, || "cmd_augment mode None is not byte-identical".into())?;
    Ok(format!("Partial within Full on 50/50 frames; None identical in memory and on disk ({} files)", a.len()))
}

// ----- shared dataset helpers -----------------------------------------------

fn random_states(r: &mut ChaCha8Rng, len: usize) -> (Vec<f64>, Vec<StateRow>) {
    let mut t = r.random_range(0.0..10.0);
    let mut ts = Vec::with_capacity(len);
    let mut rows = Vec::with_capacity(len);
    for _ in 0..len {
        t += r.random_range(0.001..0.1);
        ts.push(t);
        let mut q = random_quat(r).to_array();
        if q[0] < 0.0 {
            q = q.map(|v| -v);
        }
        let qf = q.map(|v| v as f32);
        let n = qf.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let qf = qf.map(|v| (v as f64 / n) as f32);
        rows.push([
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
            qf[0],
            qf[1],
            qf[2],
            qf[3],
            r.random_range(0.0..=1.0),
        ]);
    }
    (ts, rows)
}

fn random_episode(r: &mut ChaCha8Rng, id: String, len: usize, h: usize, views: bool) -> Episode {
    let (timestamps, states) = random_states(r, len);
    let mut v = BTreeMap::new();
    if views {
        let frames = (0..len)
            .map(|_| {
                let data = (0..6 * 4 * 3).map(|_| r.random::<u8>()).collect();
                hand2robot::augment::Image::from_raw(6, 4, data).unwrap()
            })
            .collect();
        v.insert("top".to_string(), View::Frames(frames));
        v.insert(
            "wrist".to_string(),
            View::ZeroPadded {
                frames: len,
                height: 3,
                width: 5,
            },
        );
    }
    Episode {
        id,
        embodiment: if r.random_bool(0.5) { Embodiment::HumanHand } else { Embodiment::Robot },
        task_text: "stack".into(),
        horizon: h,
        timestamps,
        states,
        views: v,
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let Ok(rd) = fs::read_dir(dir) else { return };
        for e in rd.flatten() {
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out);
            } else if let Ok(b) = fs::read(&p) {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), b);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// ----- 7 ---------------------------------------------------------------------

fn chunk_definition() -> Outcome {
    let h = 16;
    let mut r = stream(7, "acceptance-chunks", 0);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let eps: Vec<Episode> = (0..20)
        .map(|i| {
            let len = match i {
                0 => h,
                1 => h + 1,
                _ => r.random_range(1..70),
            };
            random_episode(&mut r, format!("ep{i:02}"), len, h, false)
        })
        .collect();
    write_dataset(Execution::default(), root, &eps, h).map_err(|e| e.to_string())?;
    let findings = validate_dataset(Execution::default(), root);
    ensure(findings.is_empty(), || format!("validator: {:?}", findings[0]))?;

    let mut chunks_checked = 0;
    for ep in &eps {
        let d = root.join("episodes").join(&ep.id);
        let states = decode_f32(&fs::read(d.join("states.bin")).unwrap()).unwrap();
        let actions = decode_f32(&fs::read(d.join("actions.bin")).unwrap()).unwrap();
        let n_chunks = ep.len().saturating_sub(h);
        ensure(actions.len() == n_chunks * h * 8, || format!("{}: actions.bin has {} floats", ep.id, actions.len()))?;
        for t in 0..n_chunks {
            for k in 0..h {
                for c in 0..8 {
                    let a = actions[(t * h + k) * 8 + c];
                    let s = states[(t + 1 + k) * 8 + c];
                    ensure(a.to_bits() == s.to_bits(), || format!("{} chunk {t} step {k}", ep.id))?;
                }
            }
            chunks_checked += 1;
        }
    }
    let m = read_manifest(root).map_err(|e| e.to_string())?;
    ensure(m.episodes[0].chunk_count == 0 && m.episodes[1].chunk_count == 1, || {
        format!("boundary chunk counts {} / {}", m.episodes[0].chunk_count, m.episodes[1].chunk_count)
    })?;

    // Break one action and re-sign every hash so only the chunk rule can notice.
    let target = eps.iter().position(|e| e.len() > h + 3).ok_or("no long episode")?;
    let id = eps[target].id.clone();
    let d = root.join("episodes").join(&id);
    let mut bytes = fs::read(d.join("actions.bin")).unwrap();
    let t_bad = 2;
    let off = (t_bad * h + 5) * 8 * 4;
    let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) + 0.25;
    bytes[off..off + 4].copy_from_slice(&v.to_le_bytes());
    fs::write(d.join("actions.bin"), &bytes).unwrap();
    let mut meta = read_episode_meta(&d).map_err(|e| e.to_string())?;
    meta.actions.sha256 = hand2robot::dataset::sha256_hex(&bytes);
    let meta_bytes = serde_json::to_vec_pretty(&meta).unwrap();
    fs::write(d.join("meta.json"), &meta_bytes).unwrap();
    let mut manifest = m.clone();
    manifest.episodes[target].meta_sha256 = hand2robot::dataset::sha256_hex(&meta_bytes);
    fs::write(root.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();
    let findings = validate_dataset(Execution::default(), root);
    let hit = findings
        .iter()
        .any(|f| f.kind == FindingKind::Chunk && f.episode.as_deref() == Some(id.as_str()) && f.t == Some(t_bad));
    ensure(hit, || format!("corrupted action not reported: {findings:?}"))?;
    Ok(format!("{chunks_checked} chunks exact; len h -> 0, h+1 -> 1; corruption reported at {id} t={t_bad}"))
}

// ----- 8 ---------------------------------------------------------------------

fn mix_manifest(r: &mut ChaCha8Rng) -> DatasetManifest {
    let entries = (0..12)
        .map(|i| {
            let embodiment = if i % 3 == 0 { Embodiment::Robot } else { Embodiment::HumanHand };
            let chunks = r.random_range(1..40);
            ManifestEntry {
                episode_id: format!("e{i}"),
                embodiment,
                route: hand2robot::dataset::route_name(embodiment).into(),
                length: chunks + 16,
                chunk_count: chunks,
                meta: format!("episodes/e{i}/meta.json"),
                meta_sha256: String::new(),
            }
        })
        .collect();
    DatasetManifest {
        format_version: FORMAT_VERSION,
        horizon: 16,
        state_layout: vec![],
        routes: BTreeMap::new(),
        views: BTreeMap::new(),
        normalization: String::new(),
        normalization_sha256: String::new(),
        episodes: entries,
    }
}

fn balanced_sampling() -> Outcome {
    let mut r = stream(8, "acceptance-mix", 0);
    let manifest = mix_manifest(&mut r);
    let index = build_index(&manifest).map_err(|e| e.to_string())?;
    let is_human: Vec<bool> = index.episodes().iter().map(|(_, e)| *e == Embodiment::HumanHand).collect();
    let mut batches = 0;
    for (num, den) in [(1u64, 2u64), (3, 4), (9, 10)] {
        let rho = num as f64 / den as f64;
        for b in [10usize, 16, 32, 64] {
            let want = (num * b as u64 / den) as usize;
            let plan = MixPlan::new(b, rho, 1234).map_err(|e| e.to_string())?;
            let mut s = BatchStream::new(&plan, &index).map_err(|e| e.to_string())?;
            let mut first = Vec::new();
            for k in 0..10_000 {
                let slots = s.next_slots();
                let human = slots.iter().filter(|(e, _)| is_human[*e as usize]).count();
                ensure(slots.len() == b && human == want && b - human >= 1 && human >= 1, || {
                    format!("rho {rho} B {b} batch {k}: {human} human of {}", slots.len())
                })?;
                if k < 20 {
                    first.push(slots);
                }
                batches += 1;
            }
            for (k, slots) in first.iter().enumerate() {
                let direct = next_batch(&plan, &index, k as u64).map_err(|e| e.to_string())?;
                let via: Vec<_> = slots.iter().map(|s| index.pointer(*s)).collect();
                ensure(direct == via, || format!("next_batch({k}) differs from the stream"))?;
            }
            let a = schedule_to_string(&build_schedule(&plan, &index, 200, "m", "n").map_err(|e| e.to_string())?);
            let c = schedule_to_string(&build_schedule(&plan, &index, 200, "m", "n").map_err(|e| e.to_string())?);
            ensure(a == c, || "schedule not reproducible".into())?;
        }
    }
    Ok(format!("{batches} batches with exact floor(rho*B) human samples; schedules reproducible"))
}

// ----- 9 ---------------------------------------------------------------------

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

fn end_to_end() -> Outcome {
    let spec = DemoSpec::default();
    let mut trees = Vec::new();
    let mut dirs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg_path = write_demo(dir.path(), &spec).map_err(|e| e.to_string())?;
        let cfg = LoadedConfig::load(&cfg_path).map_err(|e| e.to_string())?;
        let out = cmd_retarget(&cfg, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure(out.report.passed, || "retarget report did not pass".into())?;
        for t in &out.report.tracks {
            ensure(t.reachable_fraction == 1.0, || format!("{}: reachable {}", t.episode_id, t.reachable_fraction))?;
        }
        let ep = Dataset::open(cfg.output())
            .and_then(|d| d.load_episode("human_grasp"))
            .map_err(|e| e.to_string())?;
        let g: Vec<f64> = ep.states.iter().map(|s| s[7] as f64).collect();
        for w in g.windows(2) {
            ensure(w[1] <= w[0] + 1e-9, || format!("gripper opens: {} -> {}", w[0], w[1]))?;
        }
        ensure(g[0] - g[g.len() - 1] > 0.8, || format!("gripper only moves {} -> {}", g[0], g[g.len() - 1]))?;

        let n = spec.frames;
        let ap: Vec<f64> = (0..n)
            .map(|i| spec.aperture[0] + (spec.aperture[1] - spec.aperture[0]) * i as f64 / (n - 1) as f64)
            .collect();
        let mut sorted = ap.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (percentile(&sorted, 5.0), percentile(&sorted, 95.0));
        for (t, gi) in ep.timestamps.iter().zip(&g) {
            let i = (t * 30.0).round() as usize;
            let want = ((ap[i] - lo) / (hi - lo)).clamp(0.0, 1.0);
            ensure((want - gi).abs() <= 1e-6, || format!("frame {i}: gripper {gi} vs {want}"))?;
        }
        trees.push(tree(dir.path()));
        dirs.push(dir);
    }
    ensure(trees[0] == trees[1], || "two runs differ".into())?;
    Ok(format!("reachable 1.0, gripper closes monotonically, {} files identical across runs", trees[0].len()))
}

// ----- 10 --------------------------------------------------------------------

fn dataset_round_trip() -> Outcome {
    let mut r = stream(10, "acceptance-roundtrip", 0);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path().join("ds");
    let h = 8;
    let eps: Vec<Episode> = (0..50)
        .map(|i| {
            let len = r.random_range(1..40);
            random_episode(&mut r, format!("rt{i:02}"), len, h, true)
        })
        .collect();
    write_dataset(Execution::default(), &root, &eps, h).map_err(|e| e.to_string())?;
    let ds = Dataset::open(&root).map_err(|e| e.to_string())?;
    for ep in &eps {
        let back = ds.load_episode(&ep.id).map_err(|e| e.to_string())?;
        let bits_eq = back.states.len() == ep.states.len()
            && back.states.iter().flatten().zip(ep.states.iter().flatten()).all(|(a, b)| a.to_bits() == b.to_bits())
            && back.timestamps.iter().map(|v| v.to_bits()).eq(ep.timestamps.iter().map(|v| v.to_bits()));
        ensure(bits_eq && back == *ep, || format!("{} differs after read-back", ep.id))?;
    }
    let findings = cmd_validate(&root, &RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(findings.is_empty(), || format!("clean dataset has findings: {}", findings[0]))?;

    let files: Vec<PathBuf> = tree(&root).into_keys().collect();
    let mut order: Vec<PathBuf> = ["manifest.json", "normalization.json"]
        .iter()
        .flat_map(|f| std::iter::repeat_n(PathBuf::from(f), 25))
        .collect();
    for _ in 0..250 {
        order.push(files[r.random_range(0..files.len())].clone());
    }
    for rel in &order {
        let p = root.join(rel);
        let original = fs::read(&p).unwrap();
        let mut bad = original.clone();
        let i = r.random_range(0..bad.len());
        bad[i] ^= 1 << r.random_range(0..8);
        fs::write(&p, &bad).unwrap();
        let found = validate_dataset(Execution::default(), &root);
        fs::write(&p, &original).unwrap();
        ensure(!found.is_empty(), || format!("bit flip at byte {i} of {} went unnoticed", rel.display()))?;
    }
    Ok(format!(
        "50 episodes bit-exact, 0 findings, {} single-bit corruptions over {} files all detected",
        order.len(),
        files.len()
    ))
}

// ----- runner ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 10] = [
        ("gripper contract", gripper_contract, Some(Duration::from_secs(1))),
        ("retarget rigid equivariance", retarget_equivariance, Some(Duration::from_secs(10))),
        ("orientation construction", orientation_construction, Some(Duration::from_secs(5))),
        ("IK soundness", ik_soundness, Some(Duration::from_secs(30))),
        ("rasterizer oracle", rasterizer_oracle, Some(Duration::from_secs(30))),
        ("augmentation variants", augment_variants, Some(Duration::from_secs(5))),
        ("chunk definition", chunk_definition, None),
        ("balanced sampling", balanced_sampling, Some(Duration::from_secs(10))),
        ("end-to-end pipeline", end_to_end, Some(Duration::from_secs(60))),
        ("dataset round trip", dataset_round_trip, None),
    ];
    let mut failed = 0;
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = f();
        let took = start.elapsed();
        let result = match (result, limit) {
            (Ok(_), Some(l)) if took > *l => Err(format!("took {:.2} s, limit {} s", took.as_secs_f64(), l.as_secs())),
            (r, _) => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{tag}] {:>2} {name}: {detail} ({:.2} s)", i + 1, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
