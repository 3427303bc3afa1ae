#![allow(dead_code)]

use std::f64::consts::PI;

use coopeig::matrixkit::{MatrixField, ScalarField};
use coopeig::model::{PeriodicCell, System};
use coopeig::spectra::EigenOptions;

/// Coarse numerics for property runs.
pub fn fast() -> EigenOptions {
    EigenOptions { substeps: 64, ..EigenOptions::default() }
}

/// Draws from `p` (values in `[0, 1)`), cycling when exhausted.
pub struct Draw<'a> {
    p: &'a [f64],
    i: usize,
}

impl<'a> Draw<'a> {
    pub fn new(p: &'a [f64]) -> Self {
        Draw { p, i: 0 }
    }

    pub fn next(&mut self, lo: f64, hi: f64) -> f64 {
        let v = self.p[self.i % self.p.len()];
        self.i += 1;
        lo + (hi - lo) * v
    }

    pub fn field(&mut self, cell: &PeriodicCell, base: f64, amp: f64, time: bool) -> ScalarField {
        let (c1, p1) = (self.next(-amp, amp), self.next(0.0, 2.0 * PI));
        let (c2, p2) = if time { (self.next(-amp, amp), self.next(0.0, 2.0 * PI)) } else { (0.0, 0.0) };
        ScalarField::from_fn(cell.nt, cell.nx, |j, k| {
            let (t, x) = (cell.t_node(j) / cell.period_t, cell.x_node(k) / cell.period_l);
            base + c1 * (2.0 * PI * x + p1).cos() + c2 * (2.0 * PI * (t + x) + p2).cos()
        })
    }
}

pub struct Shape {
    pub n: usize,
    pub nt: usize,
    pub nx: usize,
    pub time: bool,
    pub drift: bool,
}

pub fn system(p: &[f64], s: Shape) -> System {
    let cell = PeriodicCell::new(1.0, 1.0, s.nt, s.nx).unwrap();
    let mut d = Draw::new(p);
    let a = (0..s.n).map(|_| {
        let b = d.next(0.5, 1.5);
        d.field(&cell, b, 0.3 * b, s.time)
    }).collect();
    let q = (0..s.n)
        .map(|_| {
            if s.drift {
                let b = d.next(-1.0, 1.0);
                d.field(&cell, b, 0.5, s.time)
            } else {
                ScalarField::constant(cell.nt, cell.nx, 0.0)
            }
        })
        .collect();
    let entries: Vec<Vec<ScalarField>> = (0..s.n)
        .map(|i| {
            (0..s.n)
                .map(|j| {
                    if i == j {
                        let b = d.next(-1.0, 1.0);
                        d.field(&cell, b, 0.5, s.time)
                    } else {
                        let b = d.next(0.2, 1.0);
                        d.field(&cell, b, 0.5 * b, s.time)
                    }
                })
                .collect()
        })
        .collect();
    System { cell, n: s.n, a, q, l: MatrixField::from_entries(&entries), reducible: false, omega: 1.0 }
}
