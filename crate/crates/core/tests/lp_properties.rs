use fairroute::lpcore::{lp_check, lp_solve, LinearProgram, LpStatus, Sense};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Box-bounded `max cᵀx, Ax ≤ b, 0 ≤ x ≤ u` by enumerating every basis of
/// `n` active constraints. Returns `None` when no vertex is feasible.
fn vertex_enumeration(c: &[f64], a: &[Vec<f64>], b: &[f64], u: &[f64]) -> Option<f64> {
    let n = c.len();
    // all constraints as rows of G x ≤ r
    let mut g: Vec<Vec<f64>> = a.to_vec();
    let mut r: Vec<f64> = b.to_vec();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        g.push(e.clone());
        r.push(u[j]);
        e[j] = -1.0;
        g.push(e);
        r.push(0.0);
    }
    let total = g.len();
    let mut best: Option<f64> = None;
    let mut pick: Vec<usize> = (0..n).collect();
    loop {
        let m = DMatrix::from_fn(n, n, |i, j| g[pick[i]][j]);
        let rhs = DVector::from_fn(n, |i, _| r[pick[i]]);
        if let Some(x) = m.lu().solve(&rhs) {
            let feasible = g.iter().zip(&r).all(|(row, ri)| {
                row.iter().zip(x.iter()).map(|(p, q)| p * q).sum::<f64>() <= ri + 1e-9
            });
            if feasible && x.iter().all(|v| v.is_finite()) {
                let val: f64 = c.iter().zip(x.iter()).map(|(p, q)| p * q).sum();
                best = Some(best.map_or(val, |bv: f64| bv.max(val)));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if pick[i] < total - n + i {
                pick[i] += 1;
                for j in i + 1..n {
                    pick[j] = pick[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn small_lp() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    (1usize..=6, 0usize..=8).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, n), m),
            prop::collection::vec(-2.0f64..6.0, m),
            prop::collection::vec(0.5f64..4.0, n),
        )
    })
}

fn build(c: &[f64], a: &[Vec<f64>], b: &[f64], u: &[f64]) -> LinearProgram {
    let mut lp = LinearProgram::new(c.len(), Sense::Maximize);
    lp.objective = c.to_vec();
    for (row, rhs) in a.iter().zip(b) {
        lp.add_le(row.clone(), *rhs);
    }
    for (j, uj) in u.iter().enumerate() {
        lp.set_bounds(j, 0.0, *uj);
    }
    lp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_vertex_enumeration((c, a, b, u) in small_lp()) {
        let lp = build(&c, &a, &b, &u);
        let res = lp_solve(&lp).unwrap();
        match vertex_enumeration(&c, &a, &b, &u) {
            Some(best) => {
                prop_assert_eq!(res.status, LpStatus::Optimal);
                prop_assert!((res.objective - best).abs() <= 1e-7 * (1.0 + best.abs()),
                    "simplex {} vs enumeration {}", res.objective, best);
                let check = lp_check(&lp, &res.x).unwrap();
                let bmax = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                prop_assert!(check.max_ineq_violation <= 1e-8 * (1.0 + bmax));
                prop_assert!(check.max_bound_violation <= 1e-9);
            }
            None => prop_assert_eq!(res.status, LpStatus::Infeasible),
        }
    }

    #[test]
    fn weak_duality_holds(
        n in 1usize..6,
        m in 1usize..7,
        seed in prop::collection::vec(0.0f64..1.0, 200),
    ) {
        // max cᵀx, Ax ≤ b, x ≥ 0 with A > 0, b > 0; dual min bᵀy, Aᵀy ≥ c, y ≥ 0
        let mut it = seed.into_iter().cycle();
        let mut next = || it.next().unwrap();
        let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| 0.1 + next()).collect()).collect();
        let b: Vec<f64> = (0..m).map(|_| 0.5 + 3.0 * next()).collect();
        let c: Vec<f64> = (0..n).map(|_| 2.0 * next() - 0.5).collect();
        let mut lp = LinearProgram::new(n, Sense::Maximize);
        lp.objective = c.clone();
        for (row, rhs) in a.iter().zip(&b) {
            lp.add_le(row.clone(), *rhs);
        }
        let res = lp_solve(&lp).unwrap();
        prop_assert_eq!(res.status, LpStatus::Optimal);

        // a feasible primal point: random direction scaled to the boundary
        let dir: Vec<f64> = (0..n).map(|_| next()).collect();
        let worst = a.iter().zip(&b)
            .map(|(row, bi)| row.iter().zip(&dir).map(|(p, q)| p * q).sum::<f64>() / bi)
            .fold(0.0f64, f64::max);
        let scale = if worst > 0.0 { next() / worst } else { 0.0 };
        let x: Vec<f64> = dir.iter().map(|d| d * scale).collect();
        let primal: f64 = c.iter().zip(&x).map(|(p, q)| p * q).sum();

        // a feasible dual point: spread enough weight so Aᵀy ≥ c
        let mut y: Vec<f64> = (0..m).map(|_| next()).collect();
        for j in 0..n {
            let cover: f64 = (0..m).map(|i| a[i][j] * y[i]).sum();
            if cover < c[j] {
                let need = (c[j] - cover) / a[0][j];
                y[0] += need;
            }
        }
        let dual: f64 = b.iter().zip(&y).map(|(p, q)| p * q).sum();

        prop_assert!(primal <= dual + 1e-8);
        prop_assert!(primal <= res.objective + 1e-8);
        prop_assert!(res.objective <= dual + 1e-8);
    }

    #[test]
    fn same_problem_same_answer((c, a, b, u) in small_lp()) {
        let lp = build(&c, &a, &b, &u);
        let first = lp_solve(&lp).unwrap();
        let second = lp_solve(&lp).unwrap();
        let reread = lp_solve(&LinearProgram::from_text(&lp.to_text()).unwrap()).unwrap();
        prop_assert_eq!(first.status, second.status);
        prop_assert_eq!(first.iterations, second.iterations);
        prop_assert_eq!(&first.x, &second.x);
        prop_assert_eq!(first.status, reread.status);
        if first.status == LpStatus::Optimal {
            prop_assert!((first.objective - reread.objective).abs() <= 1e-9 * (1.0 + first.objective.abs()));
        }
    }
}

#[test]
fn residual_report_on_violated_candidate() {
    let mut lp = LinearProgram::new(1, Sense::Maximize);
    lp.objective = vec![1.0];
    lp.add_le(vec![1.0], 1.0);
    let report = lp_check(&lp, &[1.5]).unwrap();
    assert!((report.max_ineq_violation - 0.5).abs() < 1e-15);
    let res = lp_solve(&lp).unwrap();
    let report = lp_check(&lp, &res.x).unwrap();
    assert!(report.max_ineq_violation <= 1e-8);
    assert_eq!(report.objective, 1.0);
}
