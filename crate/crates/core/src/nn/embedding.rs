use ndarray::Array1;

/// Sinusoidal features of a diffusion step index.
///
/// Slot `2j` holds `sin(i * w_j)` and slot `2j + 1` holds `cos(i * w_j)` with
/// `w_j = 10000^(-2j / size)`. An odd `size` ends on a sine slot.
pub fn sinusoidal_embedding(step: usize, size: usize) -> Array1<f64> {
    let t = step as f64;
    Array1::from_shape_fn(size, |k| {
        let j = (k / 2) as f64;
        let freq = 10000f64.powf(-2.0 * j / size as f64);
        if k % 2 == 0 {
            (t * freq).sin()
        } else {
            (t * freq).cos()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_alternates_zero_one() {
        let e = sinusoidal_embedding(0, 6);
        assert_eq!(e.to_vec(), vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn table_size_gives_five_values() {
        assert_eq!(sinusoidal_embedding(17, 5).len(), 5);
    }

    #[test]
    fn steps_are_pairwise_distinct() {
        let n = 500;
        let embs: Vec<_> = (0..=n).map(|i| sinusoidal_embedding(i, 5)).collect();
        for a in 0..=n {
            for b in (a + 1)..=n {
                let d: f64 = (&embs[a] - &embs[b]).mapv(|v| v * v).sum();
                assert!(d > 1e-10, "steps {a} and {b} collide");
            }
        }
    }
}
