use super::tensor::Tensor;

/// Named access to a model's trainable tensors.
///
/// Gradients are stored in a value of the same type as the parameters, so
/// `named()` on parameters and on gradients line up index by index.
pub trait Params {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out.into_iter().map(|(n, t)| (trim_name(n), t)).collect()
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out.into_iter().map(|(n, t)| (trim_name(n), t)).collect()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for (_, t) in z.named_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Elementwise `self += other`.
    fn accumulate(&mut self, other: &Self) {
        let src = other.named();
        for ((_, dst), (_, s)) in self.named_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

fn trim_name(name: String) -> String {
    name.strip_prefix('.').map(str::to_string).unwrap_or(name)
}
