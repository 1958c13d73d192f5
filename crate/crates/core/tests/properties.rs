use std::sync::Arc;

use proptest::prelude::*;

use suction_core::geometry::{canonicalize, rotate_observation, rotate_z_90};
use suction_core::sim::{compute_reward, EnvConfig, RewardConfig, RewardInputs, SensorMode};
use suction_core::{Action, GridSpec, Mrp, Observation, RelativePose, SuctionEnv, SymmetryIndex, Vec3, VoxelGrid};

fn k(i: u8) -> SymmetryIndex {
    SymmetryIndex::new(i).unwrap()
}

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn action() -> impl Strategy<Value = Action> {
    (vec3(1.0), vec3(1.0), -1.0..1.0f64).prop_map(|(dpos, drot, grip)| Action { dpos, drot, grip })
}

fn cells() -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
    prop::collection::vec((0..50usize, 0..50usize, 0..40usize), 0..60)
}

fn grid_of(cells: &[(usize, usize, usize)]) -> VoxelGrid {
    let mut g = VoxelGrid::empty(GridSpec::default());
    for &(x, y, z) in cells {
        g.set(x, y, z);
    }
    g
}

fn template() -> Observation {
    let mut env = SuctionEnv::builtin(EnvConfig {
        sensors: SensorMode::Voxel,
        ..EnvConfig::default()
    });
    env.reset("seen", 0).unwrap()
}

fn bits(o: &Observation) -> Vec<u64> {
    o.proprio().iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quarter_turns_compose_exactly(v in vec3(2.0), a in 0..4u8, b in 0..4u8) {
        let two = rotate_z_90(&rotate_z_90(&v, k(a)), k(b));
        let one = rotate_z_90(&v, k(a).compose(k(b)));
        prop_assert_eq!(two.map(f64::to_bits), one.map(f64::to_bits));
        prop_assert_eq!(rotate_z_90(&v, k(a)).norm(), v.norm());
    }

    #[test]
    fn canonicalization_is_idempotent_and_rotation_invariant(
        pos in vec3(0.05),
        sigma in vec3(0.3),
        vel in vec3(0.1),
        force in vec3(5.0),
        prev in action(),
        cells in cells(),
        on_axis in 0..3u8,
        j in 0..4u8,
    ) {
        let mut obs = template();
        let mut p = pos;
        // Exercise quadrant boundaries as well as generic positions.
        match on_axis {
            1 => p.x = 0.0,
            2 => { p.x = 0.0; p.y = 0.0; }
            _ => {}
        }
        obs.rel_pose = RelativePose { position: p, orientation: Mrp { sigma } };
        obs.twist.linear = vel;
        obs.force = force;
        obs.prev_action = prev;
        obs.voxels = Some(Arc::new(grid_of(&cells)));

        let (c, _) = canonicalize(&obs);
        prop_assert!(c.rel_pose.position.x >= 0.0 && c.rel_pose.position.y >= 0.0);
        let (cc, kk) = canonicalize(&c);
        prop_assert_eq!(kk.get(), 0);
        prop_assert_eq!(bits(&cc), bits(&c));

        let (cr, _) = canonicalize(&rotate_observation(&obs, k(j)));
        prop_assert_eq!(bits(&cr), bits(&c));
        prop_assert_eq!(&cr.voxels, &c.voxels);
    }

    #[test]
    fn grid_rotation_has_order_four(cells in cells(), j in 0..4u8) {
        let g = grid_of(&cells);
        let r = g.rotate_z_90(k(j));
        prop_assert_eq!(r.count(), g.count());
        prop_assert_eq!(r.rotate_z_90(k(j).inverse()), g);
    }

    #[test]
    fn opposite_shifts_restore_interior_content(
        cells in prop::collection::vec((3..47usize, 3..47usize, 3..37usize), 0..60),
        s in prop::array::uniform3(-3..=3i32),
    ) {
        let g = grid_of(&cells);
        let back = g.shifted(s).shifted([-s[0], -s[1], -s[2]]);
        prop_assert_eq!(back, g);
    }

    #[test]
    fn shifting_never_invents_voxels(cells in cells(), s in prop::array::uniform3(-3..=3i32)) {
        let g = grid_of(&cells);
        let sh = g.shifted(s);
        prop_assert!(sh.count() <= g.count());
        for [x, y, z] in sh.occupied_coords() {
            let src = [x as i32 - s[0], y as i32 - s[1], z as i32 - s[2]];
            prop_assert!(src.iter().all(|&c| c >= 0));
            prop_assert!(g.get(src[0] as usize, src[1] as usize, src[2] as usize));
        }
    }

    #[test]
    fn reward_terms_sum_to_total(
        goal in any::<bool>(),
        gripped in any::<bool>(),
        failed in any::<bool>(),
        pos in vec3(0.2),
        sigma in vec3(0.5),
        a in action(),
        prev in action(),
    ) {
        let inputs = RewardInputs {
            goal_reached: goal,
            rel_pose: RelativePose { position: pos, orientation: Mrp { sigma } },
            gripped,
            failed_activation: failed,
        };
        let r = compute_reward(&inputs, &a, &prev, &RewardConfig::default());
        prop_assert_eq!(r.total.to_bits(), (r.goal - r.step - r.pose - r.action + r.suction).to_bits());
        prop_assert_eq!(r.goal, if goal { 100.0 } else { 0.0 });
        prop_assert!(r.step >= 0.0 && r.pose >= 0.0 && r.action >= 0.0);
    }
}
