//! Simplex results against brute-force enumeration of basic solutions.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qcop::model::Sense;
use qcop::simplex::{LinearProgram, LpStatus};

#[derive(Debug, Clone)]
struct Row {
    a: Vec<f64>,
    sense: Sense,
    b: f64,
}

#[derive(Debug, Clone)]
struct Lp {
    c: Vec<f64>,
    hi: Vec<f64>,
    rows: Vec<Row>,
}

impl Lp {
    fn build(&self) -> LinearProgram {
        let n = self.c.len();
        let mut lp = LinearProgram::new(n);
        lp.obj.copy_from_slice(&self.c);
        lp.hi.copy_from_slice(&self.hi);
        for r in &self.rows {
            let coeffs = r.a.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect();
            lp.add_row(coeffs, r.sense, r.b);
        }
        lp
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let tol = 1e-7;
        let bounds = x.iter().zip(&self.hi).all(|(&v, &h)| v >= -tol && v <= h + tol);
        bounds
            && self.rows.iter().all(|r| {
                let act: f64 = r.a.iter().zip(x).map(|(a, v)| a * v).sum();
                match r.sense {
                    Sense::Le => act <= r.b + tol,
                    Sense::Ge => act >= r.b - tol,
                    Sense::Eq => (act - r.b).abs() <= tol,
                }
            })
    }

    /// Best objective over all vertices, or `None` if nothing is feasible.
    fn brute_force(&self) -> Option<f64> {
        let n = self.c.len();
        // candidate hyperplanes: every row, and both bounds of every variable
        let mut planes: Vec<(Vec<f64>, f64)> = self.rows.iter().map(|r| (r.a.clone(), r.b)).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            planes.push((e.clone(), 0.0));
            planes.push((e, self.hi[j]));
        }
        let mut best: Option<f64> = None;
        for pick in combinations(planes.len(), n) {
            let m = DMatrix::from_fn(n, n, |r, c| planes[pick[r]].0[c]);
            let b = DVector::from_iterator(n, pick.iter().map(|&k| planes[k].1));
            let Some(x) = m.lu().solve(&b) else { continue };
            if !x.iter().all(|v| v.is_finite()) {
                continue;
            }
            let x: Vec<f64> = x.iter().copied().collect();
            if self.feasible(&x) {
                let v: f64 = self.c.iter().zip(&x).map(|(c, v)| c * v).sum();
                best = Some(best.map_or(v, |b| b.max(v)));
            }
        }
        best
    }
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

fn sense() -> impl Strategy<Value = Sense> {
    prop_oneof![4 => Just(Sense::Le), 1 => Just(Sense::Ge), 1 => Just(Sense::Eq)]
}

fn row(n: usize) -> impl Strategy<Value = Row> {
    (prop::collection::vec(-4i32..=4, n), sense(), 0i32..=12)
        .prop_map(|(a, sense, b)| Row { a: a.into_iter().map(f64::from).collect(), sense, b: f64::from(b) })
}

fn lp() -> impl Strategy<Value = Lp> {
    (2usize..=6).prop_flat_map(|n| {
        (prop::collection::vec(-5i32..=5, n), prop::collection::vec(1i32..=5, n), prop::collection::vec(row(n), 1..=4))
            .prop_map(|(c, hi, rows)| Lp {
                c: c.into_iter().map(f64::from).collect(),
                hi: hi.into_iter().map(f64::from).collect(),
                rows,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn optimum_matches_vertex_enumeration(p in lp()) {
        let res = p.build().solve().unwrap();
        match p.brute_force() {
            None => prop_assert_eq!(res.status, LpStatus::Infeasible),
            Some(best) => {
                prop_assert_eq!(res.status, LpStatus::Optimal);
                prop_assert!((res.objective - best).abs() <= 1e-6 * (1.0 + best.abs()), "{} vs {}", res.objective, best);
                prop_assert!(p.feasible(&res.primal));
                let recomputed: f64 = p.c.iter().zip(&res.primal).map(|(c, v)| c * v).sum();
                prop_assert!((recomputed - res.objective).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn adding_a_row_never_raises_the_maximum(p in lp(), extra in (0usize..6).prop_flat_map(|_| row(6))) {
        let base = p.build().solve().unwrap();
        let mut q = p.clone();
        let n = q.c.len();
        q.rows.push(Row { a: extra.a[..n].to_vec(), ..extra });
        let tighter = q.build().solve().unwrap();
        if base.status == LpStatus::Optimal && tighter.status == LpStatus::Optimal {
            prop_assert!(tighter.objective <= base.objective + 1e-7);
        }
        if base.status == LpStatus::Infeasible {
            prop_assert_eq!(tighter.status, LpStatus::Infeasible);
        }
    }

    #[test]
    fn solving_twice_gives_identical_results(p in lp()) {
        let a = p.build().solve().unwrap();
        let b = p.build().solve().unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.pivots, b.pivots);
        prop_assert_eq!(a.primal, b.primal);
    }
}
