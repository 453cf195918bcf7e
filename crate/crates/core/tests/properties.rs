//! Randomized property checks for the partitioner, the chunked moment
//! reduction, and the snapshot codec.

use std::sync::Arc;

use proptest::prelude::*;

use bulbsim::grid::{build_grid, GridConfig};
use bulbsim::hamiltonian::accumulate_moments;
use bulbsim::snapshot::{decode_snapshot, encode_snapshot};
use bulbsim::state::{init_slice, Spectra};
use bulbsim::topology::{make_plan, DeviceSpec, Weight};
use bulbsim::validate::randomize_amplitudes;

fn device_strategy() -> impl Strategy<Value = DeviceSpec> {
    ("[a-z]{3}", 0usize..5, 1i64..7, 1i64..5, 1usize..9).prop_map(
        |(kind, count, num, den, threads)| DeviceSpec {
            kind,
            count,
            weight: Weight::new(num, den),
            threads,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every plan covers [0, n_theta) contiguously in rank order, and
    /// ranks with equal weight get counts that differ by at most one.
    #[test]
    fn plan_covers_contiguously(
        n_theta in 1usize..5000,
        devices in proptest::collection::vec(device_strategy(), 1..4),
    ) {
        let total_ranks: usize = devices.iter().map(|d| d.count).sum();
        prop_assume!(total_ranks >= 1 && total_ranks <= n_theta);
        let plan = make_plan(n_theta, &devices, 1).unwrap();
        let mut next = 0usize;
        for rank in &plan.ranks {
            prop_assert_eq!(rank.theta_start, next);
            next += rank.theta_count;
        }
        prop_assert_eq!(next, n_theta);

        // Equal-weight ranks of the same kind are balanced to within one.
        // (Skip kind names that appear in more than one device entry:
        // their ranks may carry different weights.)
        for dev in &devices {
            if devices.iter().filter(|d| d.kind == dev.kind).count() > 1 {
                continue;
            }
            let counts: Vec<usize> = plan
                .ranks
                .iter()
                .filter(|r| r.kind == dev.kind)
                .map(|r| r.theta_count)
                .collect();
            if let (Some(&lo), Some(&hi)) = (counts.iter().min(), counts.iter().max()) {
                prop_assert!(hi - lo <= 1, "kind {}: counts {:?}", dev.kind, counts);
            }
        }
    }

    /// Accumulating a theta range in one pass equals accumulating two
    /// halves and merging, after resolution -- for any split point and
    /// chunk size. This is the invariant that makes the reduction
    /// independent of the rank/thread decomposition.
    #[test]
    fn moment_merge_is_split_invariant(
        n_theta in 2usize..9,
        n_phi in 1usize..4,
        n_energy in 1usize..5,
        chunk_size in 1usize..5,
        split in 1usize..8,
        seed in any::<u64>(),
    ) {
        let split = 1 + split % (n_theta - 1).max(1);
        prop_assume!(split < n_theta);
        let grid = Arc::new(
            build_grid(&GridConfig { n_theta, n_phi, n_energy, ..GridConfig::default() }).unwrap(),
        );
        let mut ens = init_slice(grid, &Spectra::default(), 0, n_theta).unwrap();
        ens.set_chunk_size(chunk_size);
        randomize_amplitudes(&mut ens, seed);
        let r = ens.r_current;

        let whole = accumulate_moments(&ens, 0..n_theta, r).unwrap();
        let mut merged = accumulate_moments(&ens, 0..split, r).unwrap();
        merged.merge(accumulate_moments(&ens, split..n_theta, r).unwrap()).unwrap();

        prop_assert_eq!(whole.resolve(), merged.resolve());
    }

    /// encode -> decode is the identity on header and amplitudes for any
    /// slice shape and random state.
    #[test]
    fn snapshot_round_trips(
        n_theta in 1usize..6,
        n_phi in 1usize..4,
        n_energy in 1usize..5,
        theta_start in 0usize..3,
        step_index in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let grid = Arc::new(
            build_grid(&GridConfig {
                n_theta: n_theta + theta_start,
                n_phi,
                n_energy,
                ..GridConfig::default()
            })
            .unwrap(),
        );
        let mut ens = init_slice(grid, &Spectra::default(), theta_start, n_theta).unwrap();
        randomize_amplitudes(&mut ens, seed);

        let bytes = encode_snapshot(&ens, step_index, 3, 7);
        let snap = decode_snapshot(&bytes).unwrap();
        prop_assert_eq!(snap.header.n_theta_local, n_theta as u64);
        prop_assert_eq!(snap.header.global_theta_offset, theta_start as u64);
        prop_assert_eq!(snap.header.step_index, step_index);
        prop_assert_eq!(snap.header.writer_rank, 3);
        prop_assert_eq!(snap.header.owner_rank, 7);
        prop_assert_eq!(snap.header.radius.to_bits(), ens.r_current.to_bits());
        prop_assert_eq!(&snap.amps, ens.amps());
    }
}
