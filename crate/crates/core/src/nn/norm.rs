//! Per-channel instance normalization with learnable scale and offset.

use super::Real;

pub const NORM_EPS: f64 = 1e-5;

/// Saved statistics for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// `y[c] = scale[c] · (x[c] − mean) / sqrt(var + eps) + offset[c]` over each channel plane.
pub fn instance_norm_forward<T: Real>(
    x: &[T],
    channels: usize,
    scale: &[T],
    offset: &[T],
) -> (Vec<T>, NormCache<T>) {
    let n = x.len() / channels;
    let inv_n = T::one() / T::of(n as f64);
    let eps = T::of(NORM_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); channels];
    for c in 0..channels {
        let plane = &x[c * n..(c + 1) * n];
        let mean = plane.iter().copied().sum::<T>() * inv_n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + eps).sqrt();
        inv_std[c] = is;
        for i in 0..n {
            let h = (plane[i] - mean) * is;
            xhat[c * n + i] = h;
            y[c * n + i] = scale[c] * h + offset[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Accumulates scale/offset gradients and returns `∂L/∂x`.
pub fn instance_norm_backward<T: Real>(
    dy: &[T],
    channels: usize,
    scale: &[T],
    cache: &NormCache<T>,
    dscale: &mut [T],
    doffset: &mut [T],
) -> Vec<T> {
    let n = dy.len() / channels;
    let nf = T::of(n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for c in 0..channels {
        let g = &dy[c * n..(c + 1) * n];
        let h = &cache.xhat[c * n..(c + 1) * n];
        let sum_g = g.iter().copied().sum::<T>();
        let sum_gh = g.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>();
        dscale[c] += sum_gh;
        doffset[c] += sum_g;
        let k = scale[c] * cache.inv_std[c] / nf;
        for i in 0..n {
            dx[c * n + i] = k * (nf * g[i] - sum_g - h[i] * sum_gh);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_planes_have_zero_mean_unit_variance() {
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 1.3).sin() * 4.0 + 2.0).collect();
        let (y, _) = instance_norm_forward(&x, 2, &[1.0, 1.0], &[0.0, 0.0]);
        for c in 0..2 {
            let p = &y[c * 16..(c + 1) * 16];
            let mean: f64 = p.iter().sum::<f64>() / 16.0;
            let var: f64 = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x: Vec<f64> = (0..18).map(|i| (i as f64 * 0.9).cos() + 0.1 * i as f64).collect();
        let scale = [1.3, -0.7];
        let offset = [0.2, 0.5];
        let g: Vec<f64> = (0..18).map(|i| (i as f64 * 2.1).sin()).collect();
        let loss = |x: &[f64], s: &[f64], o: &[f64]| -> f64 {
            let (y, _) = instance_norm_forward(x, 2, s, o);
            y.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = instance_norm_forward(&x, 2, &scale, &offset);
        let mut ds = [0.0; 2];
        let mut doff = [0.0; 2];
        let dx = instance_norm_backward(&g, 2, &scale, &cache, &mut ds, &mut doff);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, &scale, &offset) - loss(&b, &scale, &offset)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6, "x[{i}]: {fd} vs {}", dx[i]);
        }
        for c in 0..2 {
            let (mut a, mut b) = (scale, scale);
            a[c] += h;
            b[c] -= h;
            let fd = (loss(&x, &a, &offset) - loss(&x, &b, &offset)) / (2.0 * h);
            assert!((fd - ds[c]).abs() < 1e-6);
            let (mut a, mut b) = (offset, offset);
            a[c] += h;
            b[c] -= h;
            let fd = (loss(&x, &scale, &a) - loss(&x, &scale, &b)) / (2.0 * h);
            assert!((fd - doff[c]).abs() < 1e-6);
        }
    }
}
