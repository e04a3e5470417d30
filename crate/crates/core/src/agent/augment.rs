use rand::Rng;
use rand_distr::StandardNormal;

use super::AugmentSpec;
use crate::numcore::Tensor;

/// Random shift (zero-pad by `shift_pixels`, crop back at a uniform offset)
/// followed by intensity scaling by `1 + scale·ε`, `ε ~ N(0, 1)` clipped to
/// ±2. Observations that are not `[channels, height, width]` images pass
/// through unchanged.
pub fn augment<R: Rng + ?Sized>(obs: &Tensor, spec: &AugmentSpec, rng: &mut R) -> Tensor {
    if !spec.enabled || obs.shape().len() != 3 {
        return obs.clone();
    }
    let mut out = if spec.shift_pixels > 0 {
        let p = spec.shift_pixels as i64;
        let dy = rng.random_range(0..=2 * p) - p;
        let dx = rng.random_range(0..=2 * p) - p;
        shift(obs, dy as isize, dx as isize)
    } else {
        obs.clone()
    };
    if spec.intensity_scale > 0.0 {
        let e: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-2.0, 2.0);
        let factor = 1.0 + spec.intensity_scale * e;
        out.data_mut().iter_mut().for_each(|x| *x *= factor);
    }
    out
}

/// `out[c, i, j] = obs[c, i + dy, j + dx]`, zero outside the image.
pub fn shift(obs: &Tensor, dy: isize, dx: isize) -> Tensor {
    let (c, h, w) = (obs.shape()[0], obs.shape()[1], obs.shape()[2]);
    let mut out = Tensor::zeros(obs.shape());
    let src = obs.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..h {
            let si = i as isize + dy;
            if si < 0 || si >= h as isize {
                continue;
            }
            for j in 0..w {
                let sj = j as isize + dx;
                if sj < 0 || sj >= w as isize {
                    continue;
                }
                dst[(ch * h + i) * w + j] = src[(ch * h + si as usize) * w + sj as usize];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot(g: usize, at: (usize, usize)) -> Tensor {
        let mut t = Tensor::zeros(&[1, g, g]);
        t.data_mut()[at.0 * g + at.1] = 1.0;
        t
    }

    #[test]
    fn disabled_and_zero_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = one_hot(5, (2, 3));
        let spec = AugmentSpec {
            enabled: true,
            shift_pixels: 0,
            intensity_scale: 0.0,
        };
        assert_eq!(augment(&x, &spec, &mut rng), x);
        assert_eq!(augment(&x, &AugmentSpec::disabled(), &mut rng), x);
        let flat = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert_eq!(augment(&flat, &spec, &mut rng), flat);
    }

    #[test]
    fn shift_moves_hot_pixel_by_at_most_one() {
        let g = 5;
        for r in 0..g {
            for c in 0..g {
                let x = one_hot(g, (r, c));
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let y = shift(&x, dy, dx);
                        let hot: Vec<usize> = (0..g * g).filter(|&i| y.data()[i] == 1.0).collect();
                        let (nr, nc) = (r as isize - dy, c as isize - dx);
                        if nr < 0 || nc < 0 || nr >= g as isize || nc >= g as isize {
                            assert!(hot.is_empty());
                        } else {
                            assert_eq!(hot, vec![nr as usize * g + nc as usize]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn intensity_factor_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = AugmentSpec {
            enabled: true,
            shift_pixels: 0,
            intensity_scale: 0.1,
        };
        let x = one_hot(3, (1, 1));
        for _ in 0..500 {
            let y = augment(&x, &spec, &mut rng);
            let v = y.data()[4];
            assert!((0.8 - 1e-12..=1.2 + 1e-12).contains(&v));
        }
    }
}
