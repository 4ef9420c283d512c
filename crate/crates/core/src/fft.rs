//! Cached three-dimensional complex FFTs on cubic grids.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft3 {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn cache() -> &'static Mutex<HashMap<usize, Arc<Fft3>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Fft3>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Shared plan for an `n x n x n` grid.
pub(crate) fn plan(n: usize) -> Arc<Fft3> {
    let mut map = cache().lock().expect("fft plan cache poisoned");
    map.entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Fft3 {
                n,
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

impl Fft3 {
    /// Unnormalized forward transform, `X_m = sum_j x_j e^{-2πi m.j/n}`.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized inverse transform, `x_j = sum_m X_m e^{+2πi m.j/n}`.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

        // innermost axis is contiguous
        fft.process_with_scratch(data, &mut scratch);

        // middle axis: one n x n plane at a time
        let mut line = vec![Complex64::default(); n * n];
        for plane in data.chunks_exact_mut(n * n) {
            for j in 0..n {
                for l in 0..n {
                    line[l * n + j] = plane[j * n + l];
                }
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for j in 0..n {
                for l in 0..n {
                    plane[j * n + l] = line[l * n + j];
                }
            }
        }

        // outermost axis: gather a slab of columns for each middle index
        let mut slab = vec![Complex64::default(); n * n];
        for j in 0..n {
            for i in 0..n {
                let base = (i * n + j) * n;
                for l in 0..n {
                    slab[l * n + i] = data[base + l];
                }
            }
            fft.process_with_scratch(&mut slab, &mut scratch);
            for i in 0..n {
                let base = (i * n + j) * n;
                for l in 0..n {
                    data[base + l] = slab[l * n + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_naive_dft() {
        let n = 4;
        let data: Vec<Complex64> = (0..n * n * n)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut fast = data.clone();
        plan(n).forward(&mut fast);
        for mi in 0..n {
            for mj in 0..n {
                for ml in 0..n {
                    let mut acc = Complex64::default();
                    for i in 0..n {
                        for j in 0..n {
                            for l in 0..n {
                                let phase = -2.0 * PI * ((mi * i + mj * j + ml * l) as f64) / n as f64;
                                acc += data[(i * n + j) * n + l] * Complex64::from_polar(1.0, phase);
                            }
                        }
                    }
                    let got = fast[(mi * n + mj) * n + ml];
                    assert!((got - acc).norm() < 1e-12);
                }
            }
        }
        plan(n).inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a / (n * n * n) as f64 - b).norm() < 1e-13);
        }
    }
}
