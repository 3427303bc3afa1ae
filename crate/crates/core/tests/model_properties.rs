use coopeig::matrixkit::{MatrixField, SquareMatrix};
use coopeig::model::{block_decompose, sample, CoefficientDescriptor, FourierTerm, PeriodicCell, System, Trig};
use proptest::prelude::*;

fn cell(nt: usize, nx: usize) -> PeriodicCell {
    PeriodicCell::new(1.0, 1.0, nt, nx).unwrap()
}

fn random_graph(n: usize, bits: &[bool]) -> System {
    let l = SquareMatrix::from_fn(n, |i, j| if i != j && bits[i * n + j] { 1.0 } else { 0.0 });
    System::constant(cell(4, 4), &vec![1.0; n], &vec![0.0; n], &l).with_reducible(true)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocks_partition_species(n in 1usize..7, bits in prop::collection::vec(prop::bool::weighted(0.25), 36)) {
        let sys = random_graph(n, &bits);
        let bs = block_decompose(&sys);
        let mut all: Vec<usize> = bs.blocks().concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        // block upper triangular after permutation
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (b, blk) in bs.blocks().iter().enumerate() {
                for &i in blk {
                    p[i] = b;
                }
            }
            p
        };
        let m = sys.max_matrix();
        for i in 0..n {
            for j in 0..n {
                if m[(i, j)] > 0.0 {
                    prop_assert!(pos[i] <= pos[j], "edge {i}<-{j} goes backwards");
                }
            }
        }
    }

    #[test]
    fn relabeling_keeps_block_sizes(n in 2usize..7, bits in prop::collection::vec(prop::bool::weighted(0.25), 36), rot in 1usize..6) {
        let sys = random_graph(n, &bits);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let l = sys.l.map(|_, _, m| SquareMatrix::from_fn(n, |i, j| m[(perm[i], perm[j])]));
        let relabeled = System { l, ..sys.clone() };
        let mut a: Vec<usize> = block_decompose(&sys).blocks().iter().map(Vec::len).collect();
        let mut b: Vec<usize> = block_decompose(&relabeled).blocks().iter().map(Vec::len).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fourier_sampling_recovers_amplitudes(amps in prop::collection::vec(-2.0f64..2.0, 3), m in 1i64..5) {
        let nx = 16;
        let terms = vec![
            FourierTerm { k: 0, m: 0, t: Trig::Cos, x: Trig::Cos, amplitude: amps[0] },
            FourierTerm { k: 0, m, t: Trig::Cos, x: Trig::Cos, amplitude: amps[1] },
            FourierTerm { k: 0, m: m + 2, t: Trig::Cos, x: Trig::Sin, amplitude: amps[2] },
        ];
        let f = sample(&CoefficientDescriptor::Fourier { terms, floor: None }, &cell(4, nx)).unwrap();
        let row = f.time_row(0);
        let proj = |g: &dyn Fn(f64) -> f64| row.iter().enumerate().map(|(k, v)| v * g(k as f64 / nx as f64)).sum::<f64>();
        let tau = 2.0 * std::f64::consts::PI;
        prop_assert!((proj(&|_| 1.0) / nx as f64 - amps[0]).abs() < 1e-12);
        prop_assert!((proj(&|x| (tau * m as f64 * x).cos()) * 2.0 / nx as f64 - amps[1]).abs() < 1e-12);
        prop_assert!((proj(&|x| (tau * (m + 2) as f64 * x).sin()) * 2.0 / nx as f64 - amps[2]).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic(v in -3.0f64..3.0, amp in 0.0f64..1.0) {
        let d = CoefficientDescriptor::Fourier { terms: vec![FourierTerm { k: 1, m: 1, t: Trig::Sin, x: Trig::Cos, amplitude: amp }], floor: None };
        let c = cell(8, 8);
        let a = sample(&d, &c).unwrap().map(|x| x + v);
        let b = sample(&d, &c).unwrap().map(|x| x + v);
        prop_assert_eq!(&a.data, &b.data);
        let sys = System { l: MatrixField::constant(&SquareMatrix::identity(1), 8, 8), ..System::constant(c, &[1.0], &[0.0], &SquareMatrix::zeros(1)) };
        prop_assert_eq!(sys.validate().unwrap(), sys.validate().unwrap());
    }
}
