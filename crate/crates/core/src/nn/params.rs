/// A collection of trainable tensors with a stable visiting order.
///
/// Gradients are stored in a value of the same type, so `visit` on a gradient
/// struct yields slices aligned one-to-one with `visit` on the parameters.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |s| n += s.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |s| out.extend_from_slice(s));
        out
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |s| {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter vector has wrong length");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |s| s.fill(value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }

    fn sq_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.visit(&mut |s| acc += s.iter().map(|v| v * v).sum::<f64>());
        acc
    }

    fn scale(&mut self, factor: f64) {
        self.visit_mut(&mut |s| s.iter_mut().for_each(|v| *v *= factor));
    }
}

/// Rescale gradients so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<P: Params + ?Sized>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

macro_rules! impl_params {
    ($ty:ty { $($field:ident),+ $(,)? }) => {
        impl $crate::nn::Params for $ty {
            fn visit(&self, f: &mut dyn FnMut(&[f64])) {
                $( $crate::nn::Params::visit(&self.$field, f); )+
            }
            fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
                $( $crate::nn::Params::visit_mut(&mut self.$field, f); )+
            }
        }
    };
}
pub(crate) use impl_params;

impl<D: ndarray::Dimension> Params for ndarray::Array<f64, D> {
    fn visit(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.as_slice().expect("parameters are stored in standard layout"));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self
            .as_slice_mut()
            .expect("parameters are stored in standard layout"));
    }
}
