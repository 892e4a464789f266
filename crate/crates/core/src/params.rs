use crate::tensor::Tensor;

/// A fixed, ordered collection of named tensors.
///
/// `named` and `tensors_mut` must list the same tensors in the same order;
/// optimizers and checkpoints rely on that pairing.
pub trait ParamSet {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }
}
