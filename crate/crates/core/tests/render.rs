use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use worldloop::render::{
    heading_windows, overlap_ratio, panorama_to_views, raycast_view, render_panorama, stitch_views, view_distance,
    Column, Observation, ViewKind, EGO_FOV_DEG,
};
use worldloop::scene::{apply_action, ActionPrimitive, Cell, GridScene, Heading, Pose};
use worldloop::scenegen::{gen_scene, SceneParams};

fn random_pose(scene: &GridScene, rng: &mut impl Rng) -> Pose {
    let free = scene.free_cells();
    scene.pose_at(free[rng.random_range(0..free.len())], Heading::from_index(rng.random_range(0..16)))
}

/// Distance to the first non-free cell, found by marching in 0.1 mm steps.
fn march(scene: &GridScene, pose: &Pose, angle_deg: f64) -> f64 {
    let (dx, dy) = (angle_deg.to_radians().cos(), angle_deg.to_radians().sin());
    let step = 1e-4;
    let mut t = 0.0;
    while t < 25.0 {
        t += step;
        if !scene.is_free_point(pose.x + t * dx, pose.y + t * dy) {
            return t;
        }
    }
    f64::INFINITY
}

#[test]
fn depths_match_ray_march() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut mismatched = Vec::new();
    for k in 0..20 {
        let scene = gen_scene(500 + k, &SceneParams::default()).unwrap();
        let pose = random_pose(&scene, &mut rng);
        let view = raycast_view(&scene, &pose, EGO_FOV_DEG, 32).unwrap();
        for (i, col) in view.columns.iter().enumerate() {
            let oracle = march(&scene, &pose, pose.heading.degrees() + view.column_bearing(i));
            if (col.depth_m - oracle).abs() > scene.cell_size() {
                mismatched.push((k, i, col.depth_m, oracle));
            }
        }
    }
    assert!(mismatched.is_empty(), "{mismatched:?}");
}

#[test]
fn circular_room_depths() {
    let (n, cs, r) = (60, 0.1, 2.0);
    let mut s = GridScene::walled(n, n, cs).unwrap();
    let c = n as f64 * cs / 2.0;
    for y in 0..n as i32 {
        for x in 0..n as i32 {
            let (px, py) = s.cell_center(Cell::new(x, y));
            if ((px - c).powi(2) + (py - c).powi(2)).sqrt() >= r {
                s.set_wall(Cell::new(x, y));
            }
        }
    }
    let pano = render_panorama(&s, &Pose::new(c, c, Heading::default()), 128).unwrap();
    for col in &pano.columns {
        assert!((col.depth_m - r).abs() <= cs, "{}", col.depth_m);
    }
}

#[test]
fn left_turn_rotates_panorama_by_four_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..10 {
        let scene = gen_scene(k, &SceneParams::default()).unwrap();
        let p = random_pose(&scene, &mut rng);
        let a = render_panorama(&scene, &p, 64).unwrap();
        let b = render_panorama(&scene, &apply_action(&scene, &p, ActionPrimitive::TurnLeft), 64).unwrap();
        for i in 0..64 {
            assert_eq!(b.columns[(i + 4) % 64], a.columns[i]);
        }
    }
}

#[test]
fn front_slice_equals_ego_view() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..10 {
        let scene = gen_scene(40 + k, &SceneParams::default()).unwrap();
        let p = random_pose(&scene, &mut rng);
        let pano = render_panorama(&scene, &p, 256).unwrap();
        let ego = raycast_view(&scene, &p, EGO_FOV_DEG, 64).unwrap();
        assert_eq!(panorama_to_views(&pano, 4).unwrap()[0].columns, ego.columns);
        let windows = heading_windows(&pano, 64).unwrap();
        assert_eq!(windows[0].columns, ego.columns);
        assert_eq!(windows[0].fov_deg, EGO_FOV_DEG);
        // window k is what the agent sees after k left turns
        let mut q = p;
        for w in &windows {
            assert_eq!(w.columns, raycast_view(&scene, &q, EGO_FOV_DEG, 64).unwrap().columns);
            q = apply_action(&scene, &q, ActionPrimitive::TurnLeft);
        }
    }
}

#[test]
fn panorama_partition_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let scene = gen_scene(9, &SceneParams::default()).unwrap();
    for _ in 0..10 {
        let pano = render_panorama(&scene, &random_pose(&scene, &mut rng), 64).unwrap();
        for n in [1, 2, 4, 8, 16] {
            let views = panorama_to_views(&pano, n).unwrap();
            assert_eq!(views.len(), n);
            assert!(views.iter().all(|v| v.width() == 64 / n && v.kind == ViewKind::Ego));
            assert_eq!(stitch_views(&views).unwrap().columns, pano.columns);
        }
        assert_eq!(panorama_to_views(&pano, 1).unwrap()[0].columns.len(), 64);
        assert!(panorama_to_views(&pano, 3).is_err());
    }
}

#[test]
fn rendering_is_deterministic() {
    let scene = gen_scene(2, &SceneParams::default()).unwrap();
    let p = random_pose(&scene, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(render_panorama(&scene, &p, 256).unwrap(), render_panorama(&scene, &p, 256).unwrap());
}

fn corridor() -> GridScene {
    let mut s = GridScene::walled(60, 7, 0.1).unwrap();
    for x in 1..59 {
        for y in 1..6 {
            s.set_free(Cell::new(x, y));
        }
    }
    s
}

#[test]
fn opposite_headings_do_not_overlap() {
    let s = corridor();
    let east = Pose::new(3.0, 0.35, Heading::from_index(0));
    let west = Pose::new(3.0, 0.35, Heading::from_index(8));
    let a = raycast_view(&s, &east, EGO_FOV_DEG, 64).unwrap();
    let b = raycast_view(&s, &west, EGO_FOV_DEG, 64).unwrap();
    assert_eq!(overlap_ratio(&a, &b, 0.1).unwrap(), 0.0);
}

/// Reprojects `a`'s hit points and matches each against the `b` column whose
/// ray angle is nearest, accepting only bearings inside `b`'s field of view.
fn overlap_oracle(a: &Observation, b: &Observation, tol: f64) -> f64 {
    let (pa, pb) = (a.pose.unwrap(), b.pose.unwrap());
    let step = b.fov_deg / b.width() as f64;
    let b_rays: Vec<f64> = (0..b.width()).map(|j| b.fov_deg / 2.0 - (j as f64 + 0.5) * step).collect();
    let mut hits = 0;
    for (i, col) in a.columns.iter().enumerate() {
        let ang = (pa.heading.degrees() + a.fov_deg / 2.0 - (i as f64 + 0.5) * a.fov_deg / a.width() as f64).to_radians();
        let (x, y) = (pa.x + col.depth_m * ang.cos(), pa.y + col.depth_m * ang.sin());
        let mut rel = (y - pb.y).atan2(x - pb.x).to_degrees() - pb.heading.degrees();
        while rel > 180.0 {
            rel -= 360.0;
        }
        while rel <= -180.0 {
            rel += 360.0;
        }
        if rel.abs() > b.fov_deg / 2.0 {
            continue;
        }
        let j = (0..b.width())
            .min_by(|&p, &q| (b_rays[p] - rel).abs().total_cmp(&(b_rays[q] - rel).abs()))
            .unwrap();
        let range = ((x - pb.x).powi(2) + (y - pb.y).powi(2)).sqrt();
        if (range - b.columns[j].depth_m).abs() <= tol {
            hits += 1;
        }
    }
    hits as f64 / a.width() as f64
}

#[test]
fn forward_step_overlap_matches_reprojection() {
    let s = GridScene::walled(40, 40, 0.1).unwrap();
    for h in 0..16 {
        let p = Pose::new(2.05, 2.05, Heading::from_index(h));
        let q = apply_action(&s, &p, ActionPrimitive::Forward);
        let a = raycast_view(&s, &p, EGO_FOV_DEG, 64).unwrap();
        let b = raycast_view(&s, &q, EGO_FOV_DEG, 64).unwrap();
        let got = overlap_ratio(&a, &b, 0.1).unwrap();
        let oracle = overlap_oracle(&a, &b, 0.2);
        assert!((got - oracle).abs() <= 1.0 / 64.0 + 1e-12, "heading {h}: {got} vs {oracle}");
        assert!(got > 0.5);
    }
}

#[test]
fn view_distance_examples() {
    let col = |d, c| Column { depth_m: d, class_id: c, instance_id: 0 };
    let obs = |cols: Vec<Column>| Observation { kind: ViewKind::Ego, fov_deg: 90.0, columns: cols, pose: None };
    let a = obs(vec![col(1.0, 1); 64]);
    assert_eq!(view_distance(&a, &a).unwrap(), 0.0);
    let far = obs(vec![col(3.5, 2); 64]);
    assert_eq!(view_distance(&a, &far).unwrap(), 1.0);
    let mut one = a.clone();
    one.columns[17].class_id = 5;
    assert!((view_distance(&a, &one).unwrap() - 0.5 / 64.0).abs() < 1e-15);
    let pano = Observation { kind: ViewKind::Panorama, fov_deg: 360.0, ..a.clone() };
    assert!(view_distance(&a, &pano).is_err());
    assert!(view_distance(&a, &obs(vec![col(1.0, 1); 32])).is_err());
}

fn obs_strategy() -> impl Strategy<Value = Vec<(f64, u16)>> {
    prop::collection::vec((0.0f64..20.0, 0u16..4), 16)
}

fn to_obs(v: &[(f64, u16)]) -> Observation {
    Observation {
        kind: ViewKind::Ego,
        fov_deg: 90.0,
        columns: v.iter().map(|&(d, c)| Column { depth_m: d, class_id: c, instance_id: 0 }).collect(),
        pose: None,
    }
}

proptest! {
    #[test]
    fn view_distance_is_pseudometric(a in obs_strategy(), b in obs_strategy(), c in obs_strategy()) {
        let (a, b, c) = (to_obs(&a), to_obs(&b), to_obs(&c));
        let ab = view_distance(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, view_distance(&b, &a).unwrap());
        prop_assert_eq!(view_distance(&a, &a).unwrap(), 0.0);
        let ac = view_distance(&a, &c).unwrap();
        let cb = view_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }
}
