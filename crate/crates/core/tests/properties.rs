mod common;

use proptest::prelude::*;

use lqgame::matrix::{max_abs, Mat};
use lqgame::problem::{assemble, GameProblem, MatrixFunction};
use lqgame::riccati::{integrate_riccati, uniform_grid};
use lqgame::simulate::{path_summaries, BrownianBatch};
use lqgame::strategy::ClosedLoopStrategy;
use lqgame::Execution;

fn entries(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len)
}

fn mat(rows: usize, cols: usize, v: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, &v[..rows * cols])
}

fn sym(n: usize, v: &[f64]) -> Mat {
    let m = mat(n, n, v);
    (&m + m.transpose()) * 0.5
}

/// `M Mᵀ + shift·I`.
fn gram(n: usize, v: &[f64], shift: f64) -> Mat {
    let m = mat(n, n, v);
    &m * m.transpose() + Mat::identity(n, n) * shift
}

fn konst(m: Mat) -> MatrixFunction {
    MatrixFunction::constant(&m)
}

#[derive(Clone, Debug)]
struct Data {
    a: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    c: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    q: Vec<f64>,
    g: Vec<f64>,
    r11: Vec<f64>,
    r22: Vec<f64>,
}

fn data() -> impl Strategy<Value = Data> {
    (
        (entries(4), entries(2), entries(2), entries(4), entries(2)),
        (entries(2), entries(4), entries(4), entries(1), entries(1)),
    )
        .prop_map(|((a, b1, b2, c, d1), (d2, q, g, r11, r22))| Data {
            a,
            b1,
            b2,
            c,
            d1,
            d2,
            q,
            g,
            r11,
            r22,
        })
}

/// Two-state problem with definite control weights. `two_players` selects
/// `m2 = 1` (with a concave player-2 weight) or `m2 = 0`.
fn problem(d: &Data, two_players: bool) -> GameProblem {
    let m2 = two_players as usize;
    let mut p = GameProblem::zeros("random", 0.0, 1.0, 2, 1, m2);
    p.a = konst(mat(2, 2, &d.a));
    p.b1 = konst(mat(2, 1, &d.b1));
    p.c = konst(mat(2, 2, &d.c) * 0.5);
    p.d1 = konst(mat(2, 1, &d.d1) * 0.5);
    p.q = konst(gram(2, &d.q, 0.0));
    p.r11 = konst(Mat::from_element(1, 1, 2.0 + d.r11[0]));
    p.terminal = sym(2, &d.g) * 0.5 + Mat::identity(2, 2);
    if two_players {
        p.b2 = konst(mat(2, 1, &d.b2));
        p.d2 = konst(mat(2, 1, &d.d2) * 0.1);
        p.r22 = konst(Mat::from_element(1, 1, -20.0 + d.r22[0]));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn integrated_solutions_stay_symmetric(d in data(), two in any::<bool>()) {
        let sp = assemble(&problem(&d, two)).unwrap();
        let p = integrate_riccati(&sp, 200).unwrap();
        prop_assert!(p.max_asymmetry() <= 1e-9, "{}", p.max_asymmetry());
    }

    #[test]
    fn one_player_stacking_is_exact(d in data(), s in 0.0..1.0f64) {
        let g = problem(&d, false);
        let sp = assemble(&g).unwrap();
        let k = sp.at(s);
        prop_assert_eq!(k.b, g.b1.eval(s));
        prop_assert_eq!(k.d, g.d1.eval(s));
        prop_assert_eq!(k.r, g.r11.eval(s));
        prop_assert_eq!(k.s, g.s1.eval(s));
        prop_assert_eq!(k.rho, g.rho1.eval(s));
    }

    #[test]
    fn two_player_stacking_places_blocks(d in data(), s in 0.0..1.0f64) {
        let g = problem(&d, true);
        let k = assemble(&g).unwrap().at(s);
        prop_assert_eq!(k.b.columns(0, 1).into_owned(), g.b1.eval(s));
        prop_assert_eq!(k.b.columns(1, 1).into_owned(), g.b2.eval(s));
        prop_assert_eq!(k.d.columns(1, 1).into_owned(), g.d2.eval(s));
        prop_assert_eq!(k.r[(0, 0)], g.r11.eval(s)[(0, 0)]);
        prop_assert_eq!(k.r[(1, 1)], g.r22.eval(s)[(0, 0)]);
        prop_assert_eq!(k.r[(0, 1)], 0.0);
    }

    #[test]
    fn refinement_changes_solution_at_fourth_order(d in data(), two in any::<bool>()) {
        let sp = assemble(&problem(&d, two)).unwrap();
        let p1 = integrate_riccati(&sp, 50).unwrap();
        let p2 = integrate_riccati(&sp, 100).unwrap();
        let p4 = integrate_riccati(&sp, 200).unwrap();
        prop_assume!(p1.is_complete() && p2.is_complete() && p4.is_complete());
        let d12 = max_abs(&(&p1.values[0] - &p2.values[0]));
        let d24 = max_abs(&(&p2.values[0] - &p4.values[0]));
        prop_assert!(d24 < 1e-6, "{d24}");
        // Richardson: successive differences shrink by about 2⁴, unless
        // both are already at rounding level.
        prop_assert!(d12 < 1e-12 || d12 / d24.max(1e-300) > 10.0, "{d12} / {d24}");
    }

    #[test]
    fn parallel_and_sequential_paths_agree(seed in any::<u64>(), x in -2.0..2.0f64) {
        let sp = common::gbm_problem(0.3, 0.7);
        let grid = uniform_grid(0.0, 1.0, 20);
        let st = ClosedLoopStrategy::zero(grid.clone(), 1, 1, 0);
        let run = |e: Execution| {
            let batch = BrownianBatch::new(seed, 64, grid.clone()).unwrap().with_execution(e);
            path_summaries(&sp, &st, &[x], &batch).unwrap()
        };
        let a = run(Execution::Sequential);
        let b = run(Execution::Parallel);
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(p.payoff.to_bits(), q.payoff.to_bits());
            prop_assert_eq!(&p.terminal, &q.terminal);
        }
    }
}
