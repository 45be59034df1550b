//! Synthetic prompt/scene environment with analytic rewards.
//!
//! Each prompt id maps to a planted scene: a base point `y`, evenly spaced
//! view angles, and one distractor offset per view. The single-view reward
//! peaks at the *distracted* per-view target while the joint-view reward
//! peaks when all views are consistent projections of one common point, so
//! the two reward channels are in deliberate tension (tuned by `gamma`).

use rand::Rng;
use thiserror::Error;

use crate::seeds;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("scene requires at least one view, got 0")]
    NoViews,
    #[error("malformed scene record: {0}")]
    Parse(String),
}

/// A planted toy scene for one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub prompt: usize,
    /// Base latent y in R^d.
    pub base: Vec<f64>,
    /// View angles 2*pi*(v-1)/V, radians.
    pub angles: Vec<f64>,
    /// Per-view distractor offsets, each of norm `gamma`.
    pub offsets: Vec<Vec<f64>>,
    pub gamma: f64,
}

/// Rotates the first two coordinates of `p` by `angle`.
pub fn rotate(p: &[f64], angle: f64) -> Vec<f64> {
    let mut out = p.to_vec();
    if p.len() >= 2 {
        let (s, c) = angle.sin_cos();
        out[0] = c * p[0] - s * p[1];
        out[1] = s * p[0] + c * p[1];
    }
    out
}

/// Default distractor offset norm.
pub const DEFAULT_GAMMA: f64 = 0.5;

/// Builds the scene for `(prompt, seed)` deterministically.
pub fn make_scene(
    prompt: usize,
    views: usize,
    latent_dim: usize,
    gamma: f64,
    seed: u64,
) -> Result<SceneSpec, SceneError> {
    if views == 0 {
        return Err(SceneError::NoViews);
    }
    let mut rng = seeds::stream(seed, &[0x5ce2e, prompt as u64]);
    let base: Vec<f64> = (0..latent_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let angles: Vec<f64> =
        (0..views).map(|v| 2.0 * std::f64::consts::PI * v as f64 / views as f64).collect();
    let mut offsets = Vec::with_capacity(views);
    for _ in 0..views {
        // Direction from a normalized Gaussian draw, scaled to norm gamma.
        loop {
            let dir: Vec<f64> =
                (0..latent_dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                offsets.push(dir.iter().map(|x| x / norm * gamma).collect());
                break;
            }
        }
    }
    Ok(SceneSpec { prompt, base, angles, offsets, gamma })
}

/// The clean (undistracted) target for view `v`: Rot(theta_v) * y.
pub fn target_view(scene: &SceneSpec, v: usize) -> Vec<f64> {
    rotate(&scene.base, scene.angles[v])
}

/// Single-view fidelity reward: -||x - (target_v + delta_v)||^2, max 0.
pub fn single_view_reward(x: &[f64], scene: &SceneSpec, v: usize) -> f64 {
    let target = target_view(scene, v);
    -x.iter()
        .zip(target.iter().zip(&scene.offsets[v]))
        .map(|(xi, (ti, di))| {
            let r = xi - (ti + di);
            r * r
        })
        .sum::<f64>()
}

/// Gradient of `single_view_reward` with respect to `x`.
pub fn single_view_reward_grad(x: &[f64], scene: &SceneSpec, v: usize) -> Vec<f64> {
    let target = target_view(scene, v);
    x.iter()
        .zip(target.iter().zip(&scene.offsets[v]))
        .map(|(xi, (ti, di))| -2.0 * (xi - (ti + di)))
        .collect()
}

/// Joint-view consistency reward: back-rotate every view and penalize the
/// spread around the common mean; -(1/V) sum_v ||u_v - u_bar||^2, max 0.
pub fn joint_view_reward(xs: &[Vec<f64>], scene: &SceneSpec) -> f64 {
    let views = xs.len();
    let dim = xs[0].len();
    let backs: Vec<Vec<f64>> =
        xs.iter().enumerate().map(|(v, x)| rotate(x, -scene.angles[v])).collect();
    let mut mean = vec![0.0; dim];
    for u in &backs {
        for (m, ui) in mean.iter_mut().zip(u) {
            *m += ui;
        }
    }
    for m in &mut mean {
        *m /= views as f64;
    }
    let spread: f64 = backs
        .iter()
        .map(|u| u.iter().zip(&mean).map(|(ui, mi)| (ui - mi) * (ui - mi)).sum::<f64>())
        .sum();
    -spread / views as f64
}

/// Per-view gradients of `joint_view_reward` with respect to each x_v.
pub fn joint_view_reward_grad(xs: &[Vec<f64>], scene: &SceneSpec) -> Vec<Vec<f64>> {
    let views = xs.len();
    let dim = xs[0].len();
    let backs: Vec<Vec<f64>> =
        xs.iter().enumerate().map(|(v, x)| rotate(x, -scene.angles[v])).collect();
    let mut mean = vec![0.0; dim];
    for u in &backs {
        for (m, ui) in mean.iter_mut().zip(u) {
            *m += ui;
        }
    }
    for m in &mut mean {
        *m /= views as f64;
    }
    backs
        .iter()
        .enumerate()
        .map(|(v, u)| {
            // d/du_v = -(2/V)(u_v - mean); chain through the back-rotation.
            let gu: Vec<f64> = u
                .iter()
                .zip(&mean)
                .map(|(ui, mi)| -2.0 / views as f64 * (ui - mi))
                .collect();
            rotate(&gu, scene.angles[v])
        })
        .collect()
}

/// The closed-form optimum of the Lagrangian trade-off at multiplier
/// `lambda`, in back-rotated coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    /// Best achievable sum of single-view rewards.
    pub sum_single: f64,
    /// Joint-view reward at the optimizer.
    pub joint: f64,
    /// Optimizing points u_v (back-rotated coordinates).
    pub points: Vec<Vec<f64>>,
}

/// Maximizes sum_v -||u_v - a_v||^2 + lambda * (-(1/V) sum_v ||u_v - u_bar||^2)
/// over the u_v, where a_v = y + Rot(-theta_v) delta_v. The objective is a
/// strictly concave quadratic; stationarity gives u_v = (V a_v + lambda a_bar)
/// / (V + lambda) with u_bar = a_bar.
pub fn constrained_optimum_oracle(scene: &SceneSpec, lambda: f64) -> OracleSolution {
    let views = scene.angles.len();
    let dim = scene.base.len();
    let targets: Vec<Vec<f64>> = (0..views)
        .map(|v| {
            let back = rotate(&scene.offsets[v], -scene.angles[v]);
            scene.base.iter().zip(&back).map(|(y, d)| y + d).collect()
        })
        .collect();
    let mut mean = vec![0.0; dim];
    for a in &targets {
        for (m, ai) in mean.iter_mut().zip(a) {
            *m += ai;
        }
    }
    for m in &mut mean {
        *m /= views as f64;
    }
    let spread: f64 = targets
        .iter()
        .map(|a| a.iter().zip(&mean).map(|(ai, mi)| (ai - mi) * (ai - mi)).sum::<f64>())
        .sum();
    let vf = views as f64;
    let shrink = vf / (vf + lambda);
    let points: Vec<Vec<f64>> = targets
        .iter()
        .map(|a| a.iter().zip(&mean).map(|(ai, mi)| mi + shrink * (ai - mi)).collect())
        .collect();
    let sum_single = -(lambda / (vf + lambda)).powi(2) * spread;
    let joint = -(vf / (vf + lambda).powi(2)) * spread;
    OracleSolution { sum_single, joint, points }
}

/// One-line text record per scene: prompt, base, angles, offsets.
pub fn scene_to_text(scene: &SceneSpec) -> String {
    let join = |xs: &[f64]| xs.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",");
    let offsets =
        scene.offsets.iter().map(|o| join(o)).collect::<Vec<_>>().join(";");
    format!(
        "prompt={} gamma={:?} base={} angles={} offsets={}",
        scene.prompt,
        scene.gamma,
        join(&scene.base),
        join(&scene.angles),
        offsets
    )
}

/// Parses a record produced by [`scene_to_text`].
pub fn scene_from_text(line: &str) -> Result<SceneSpec, SceneError> {
    let mut prompt = None;
    let mut gamma = None;
    let mut base = None;
    let mut angles = None;
    let mut offsets = None;
    let parse_vec = |s: &str| -> Result<Vec<f64>, SceneError> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| SceneError::Parse(e.to_string())))
            .collect()
    };
    for field in line.split_whitespace() {
        let (key, val) =
            field.split_once('=').ok_or_else(|| SceneError::Parse(format!("field {field}")))?;
        match key {
            "prompt" => {
                prompt = Some(val.parse().map_err(|_| SceneError::Parse(field.into()))?)
            }
            "gamma" => gamma = Some(val.parse().map_err(|_| SceneError::Parse(field.into()))?),
            "base" => base = Some(parse_vec(val)?),
            "angles" => angles = Some(parse_vec(val)?),
            "offsets" => {
                offsets =
                    Some(val.split(';').map(parse_vec).collect::<Result<Vec<_>, _>>()?)
            }
            other => return Err(SceneError::Parse(format!("unknown field {other}"))),
        }
    }
    match (prompt, gamma, base, angles, offsets) {
        (Some(prompt), Some(gamma), Some(base), Some(angles), Some(offsets)) => {
            Ok(SceneSpec { prompt, base, angles, offsets, gamma })
        }
        _ => Err(SceneError::Parse("missing field".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn demo_scene() -> SceneSpec {
        make_scene(3, 6, 2, DEFAULT_GAMMA, 99).unwrap()
    }

    #[test]
    fn make_scene_is_deterministic() {
        assert_eq!(demo_scene(), demo_scene());
        assert_ne!(demo_scene(), make_scene(4, 6, 2, DEFAULT_GAMMA, 99).unwrap());
    }

    #[test]
    fn six_views_use_sixty_degree_spacing() {
        let scene = demo_scene();
        for (v, angle) in scene.angles.iter().enumerate() {
            assert!((angle - v as f64 * std::f64::consts::PI / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn offsets_have_norm_gamma() {
        let scene = demo_scene();
        for o in &scene.offsets {
            let norm = o.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn target_view_rotations() {
        let mut scene = demo_scene();
        scene.base = vec![1.0, 0.0];
        assert_eq!(target_view(&scene, 0), vec![1.0, 0.0]);
        let half_turn = rotate(&[1.0, 0.0], std::f64::consts::PI);
        assert!((half_turn[0] - -1.0).abs() < 1e-12 && half_turn[1].abs() < 1e-12);
        // all targets back-rotate to the base
        for v in 0..scene.angles.len() {
            let back = rotate(&target_view(&scene, v), -scene.angles[v]);
            for (b, y) in back.iter().zip(&scene.base) {
                assert!((b - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_view_reward_peaks_at_distracted_target() {
        let scene = demo_scene();
        let v = 2;
        let peak: Vec<f64> =
            target_view(&scene, v).iter().zip(&scene.offsets[v]).map(|(t, d)| t + d).collect();
        assert_eq!(single_view_reward(&peak, &scene, v), 0.0);
        let at_clean = single_view_reward(&target_view(&scene, v), &scene, v);
        assert!((at_clean - -0.25).abs() < 1e-12);
    }

    #[test]
    fn single_view_reward_matches_distance_formula() {
        let scene = demo_scene();
        let x = vec![0.3, -0.8];
        let got = single_view_reward(&x, &scene, 1);
        let t = target_view(&scene, 1);
        let expect = -((x[0] - (t[0] + scene.offsets[1][0])).powi(2)
            + (x[1] - (t[1] + scene.offsets[1][1])).powi(2));
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn joint_reward_zero_for_consistent_projections() {
        let scene = demo_scene();
        let z = vec![0.7, -0.2];
        let xs: Vec<Vec<f64>> =
            (0..scene.angles.len()).map(|v| rotate(&z, scene.angles[v])).collect();
        assert!(joint_view_reward(&xs, &scene).abs() < 1e-24);
    }

    #[test]
    fn joint_reward_two_point_spread() {
        let mut scene = demo_scene();
        scene.angles = vec![0.0, 0.0];
        scene.offsets.truncate(2);
        let xs = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        assert!((joint_view_reward(&xs, &scene) - -1.0).abs() < 1e-12);
    }

    #[test]
    fn single_view_optimum_is_jointly_inconsistent() {
        let scene = demo_scene();
        let xs: Vec<Vec<f64>> = (0..scene.angles.len())
            .map(|v| {
                target_view(&scene, v).iter().zip(&scene.offsets[v]).map(|(t, d)| t + d).collect()
            })
            .collect();
        assert!(joint_view_reward(&xs, &scene) < -1e-4);
    }

    #[test]
    fn reward_gradients_match_finite_differences() {
        let scene = demo_scene();
        let h = 1e-5;
        let x = vec![0.4, -0.9];
        let grad = single_view_reward_grad(&x, &scene, 0);
        for j in 0..2 {
            let mut up = x.clone();
            up[j] += h;
            let mut dn = x.clone();
            dn[j] -= h;
            let fd =
                (single_view_reward(&up, &scene, 0) - single_view_reward(&dn, &scene, 0)) / (2.0 * h);
            assert!((fd - grad[j]).abs() / fd.abs().max(grad[j].abs()).max(1e-6) < 1e-4);
        }
        let xs: Vec<Vec<f64>> = vec![vec![0.3, 0.1], vec![-0.5, 0.7], vec![0.0, -0.4]];
        let mut scene3 = scene.clone();
        scene3.angles.truncate(3);
        scene3.offsets.truncate(3);
        let grads = joint_view_reward_grad(&xs, &scene3);
        for v in 0..3 {
            for j in 0..2 {
                let mut up = xs.clone();
                up[v][j] += h;
                let mut dn = xs.clone();
                dn[v][j] -= h;
                let fd = (joint_view_reward(&up, &scene3) - joint_view_reward(&dn, &scene3))
                    / (2.0 * h);
                let denom = fd.abs().max(grads[v][j].abs()).max(1e-6);
                assert!((fd - grads[v][j]).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn oracle_lambda_zero_hits_per_view_targets() {
        let scene = demo_scene();
        let sol = constrained_optimum_oracle(&scene, 0.0);
        assert_eq!(sol.sum_single, 0.0);
        // joint equals -(1/V) sum ||a_v - a_bar||^2
        let views = scene.angles.len();
        let targets: Vec<Vec<f64>> = (0..views)
            .map(|v| {
                let back = rotate(&scene.offsets[v], -scene.angles[v]);
                scene.base.iter().zip(&back).map(|(y, d)| y + d).collect()
            })
            .collect();
        let mean: Vec<f64> = (0..2)
            .map(|j| targets.iter().map(|a| a[j]).sum::<f64>() / views as f64)
            .collect();
        let spread: f64 = targets
            .iter()
            .map(|a| a.iter().zip(&mean).map(|(ai, mi)| (ai - mi) * (ai - mi)).sum::<f64>())
            .sum();
        assert!((sol.joint - -spread / views as f64).abs() < 1e-12);
        for (p, a) in sol.points.iter().zip(&targets) {
            for (pi, ai) in p.iter().zip(a) {
                assert!((pi - ai).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_large_lambda_collapses_views() {
        let scene = demo_scene();
        let sol = constrained_optimum_oracle(&scene, 1e9);
        assert!(sol.joint > -1e-12);
        for w in sol.points.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn oracle_stationarity_via_reward_gradients() {
        // At the optimizer, the gradient of sum_single + lambda * joint
        // (in u-space, i.e. a zero-angle scene at the a_v targets) vanishes.
        let scene = demo_scene();
        let lambda = 1.3;
        let sol = constrained_optimum_oracle(&scene, lambda);
        let views = scene.angles.len();
        let flat = SceneSpec {
            prompt: scene.prompt,
            base: scene.base.clone(),
            angles: vec![0.0; views],
            offsets: (0..views).map(|v| rotate(&scene.offsets[v], -scene.angles[v])).collect(),
            gamma: scene.gamma,
        };
        let joint_g = joint_view_reward_grad(&sol.points, &flat);
        for (v, jg) in joint_g.iter().enumerate() {
            let single_g = single_view_reward_grad(&sol.points[v], &flat, v);
            for j in 0..2 {
                let total = single_g[j] + lambda * jg[j];
                assert!(total.abs() < 1e-9, "view {v} coord {j}: {total}");
            }
        }
    }

    #[test]
    fn scene_text_round_trip() {
        let scene = demo_scene();
        let text = scene_to_text(&scene);
        let back = scene_from_text(&text).unwrap();
        assert_eq!(scene, back);
        assert!(scene_from_text("prompt=1 bogus=2").is_err());
    }

    proptest! {
        #[test]
        fn joint_reward_nonpositive_and_shift_invariant(
            seed in 0u64..1000,
            shift0 in -1.0f64..1.0,
            shift1 in -1.0f64..1.0,
        ) {
            let scene = make_scene(0, 4, 2, DEFAULT_GAMMA, seed).unwrap();
            let mut rng = crate::seeds::stream(seed, &[77]);
            let xs: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..2).map(|_| rand::Rng::gen_range(&mut rng, -1.5..1.5)).collect())
                .collect();
            let r = joint_view_reward(&xs, &scene);
            prop_assert!(r <= 1e-15);
            // common shift expressed in view coordinates leaves it unchanged
            let shifted: Vec<Vec<f64>> = xs
                .iter()
                .enumerate()
                .map(|(v, x)| {
                    let u = rotate(x, -scene.angles[v]);
                    let moved: Vec<f64> =
                        u.iter().zip([shift0, shift1].iter()).map(|(a, s)| a + s).collect();
                    rotate(&moved, scene.angles[v])
                })
                .collect();
            let r2 = joint_view_reward(&shifted, &scene);
            prop_assert!((r - r2).abs() < 1e-9);
        }
    }
}
