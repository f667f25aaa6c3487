use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::spec::{param_id, Linear, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
}

/// Named parameter tensors split into free (trainable) and frozen entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    map: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, id: impl Into<String>, tensor: Tensor<T>, frozen: bool) {
        self.map.insert(id.into(), Param { tensor, frozen });
    }

    pub fn get(&self, id: &str) -> Result<&Param<T>> {
        self.map.get(id).ok_or_else(|| Error::UnknownParam(id.to_string()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut Param<T>> {
        self.map.get_mut(id).ok_or_else(|| Error::UnknownParam(id.to_string()))
    }

    pub fn tensor(&self, id: &str) -> Result<&Tensor<T>> {
        self.get(id).map(|p| &p.tensor)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.map.contains_key(id)
    }

    pub fn remove(&mut self, id: &str) -> Option<Param<T>> {
        self.map.remove(id)
    }

    /// Entries in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn free_ids(&self) -> Vec<String> {
        self.map.iter().filter(|(_, p)| !p.frozen).map(|(k, _)| k.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of free scalar values.
    pub fn free_count(&self) -> usize {
        self.map.values().filter(|p| !p.frozen).map(|p| p.tensor.len()).sum()
    }

    /// Squared Euclidean norm over all free tensors.
    pub fn free_norm_sq(&self) -> T {
        self.map.values().filter(|p| !p.frozen).map(|p| p.tensor.norm_sq()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|p| p.tensor.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            map: self
                .map
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            frozen: p.frozen,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Fresh parameters for `spec`: weights uniform in `±sqrt(1/fan_in)`,
/// diagonal scalings 1, biases 0.
pub fn init_params<T: Scalar, R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<ParamSet<T>> {
    spec.shapes()?;
    let mut ps = ParamSet::new();
    for (li, layer) in spec.layers.iter().enumerate() {
        let k = li + 1;
        let mut add_linear = |suffix: &str, op: &Linear, ps: &mut ParamSet<T>| {
            if let Some(shape) = op.param_shape() {
                let t = match op {
                    Linear::Diagonal { .. } => Tensor::ones(&shape),
                    _ => {
                        let bound = (1.0 / op.fan_in() as f64).sqrt();
                        Tensor::from_fn(&shape, |_| T::lit(rng.gen_range(-bound..=bound)))
                    }
                };
                ps.insert(param_id(k, suffix), t, false);
            }
        };
        add_linear("W", &layer.weight, &mut ps);
        if let Some(skip) = &layer.skip {
            add_linear("A", &skip.op, &mut ps);
        }
    }
    for (id, shape) in spec.param_shapes() {
        if id.ends_with(".b") {
            ps.insert(id, Tensor::zeros(&shape), false);
        }
    }
    Ok(ps)
}

/// Parameter ids whose entries must stay nonnegative.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConstraintPlan {
    ids: BTreeSet<String>,
}

impl ConstraintPlan {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Weights of every layer `k >= 2` and skip links leaving a feature map
    /// `z^j` with `j >= 2`. With convex nondecreasing activations this makes
    /// every output component convex in the input.
    pub fn convexity(spec: &NetworkSpec) -> Self {
        let mut ids = BTreeSet::new();
        for (li, layer) in spec.layers.iter().enumerate() {
            let k = li + 1;
            if k >= 2 && layer.weight.param_shape().is_some() {
                ids.insert(param_id(k, "W"));
            }
            if let Some(skip) = &layer.skip {
                if skip.from >= 2 && skip.op.param_shape().is_some() {
                    ids.insert(param_id(k, "A"));
                }
            }
        }
        Self { ids }
    }

    pub fn with(mut self, id: impl Into<String>) -> Self {
        self.ids.insert(id.into());
        self
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Replaces every constrained tensor by its entrywise positive part.
pub fn project_convex<T: Scalar>(params: &mut ParamSet<T>, plan: &ConstraintPlan) -> Result<()> {
    for id in plan.ids() {
        if !params.contains(id) {
            return Err(Error::UnknownParam(id.to_string()));
        }
    }
    for id in plan.ids() {
        let p = params.get_mut(id)?;
        p.tensor.data_mut().iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero();
            }
        });
    }
    Ok(())
}

/// Smallest entry over all constrained tensors (`+inf` for an empty plan).
pub fn min_constrained<T: Scalar>(params: &ParamSet<T>, plan: &ConstraintPlan) -> Result<T> {
    let mut m = T::infinity();
    for id in plan.ids() {
        let t = params.tensor(id)?;
        if !t.is_empty() {
            m = m.min(t.min());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::{Activation, Bias, LayerSpec};
    use crate::tensor::PadSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_layer() -> NetworkSpec {
        NetworkSpec::new(
            vec![4, 4, 1],
            vec![
                LayerSpec::new(Linear::Conv { kh: 3, kw: 3, cin: 1, cout: 2, pad: PadSpec::uniform(1), stride: 1 }, Bias::PerChannel(2), Activation::Relu),
                LayerSpec::new(Linear::Diagonal { channels: 2 }, Bias::PerChannel(2), Activation::Relu).with_skip(1, Linear::Conv {
                    kh: 1,
                    kw: 1,
                    cin: 1,
                    cout: 2,
                    pad: PadSpec::NONE,
                    stride: 1,
                }),
                LayerSpec::new(Linear::Conv { kh: 1, kw: 1, cin: 2, cout: 1, pad: PadSpec::NONE, stride: 1 }, Bias::Scalar, Activation::Identity)
                    .with_skip(2, Linear::Conv { kh: 1, kw: 1, cin: 2, cout: 1, pad: PadSpec::NONE, stride: 1 }),
            ],
        )
    }

    #[test]
    fn init_matches_declared_shapes() {
        let spec = two_layer();
        let ps: ParamSet<f64> = init_params(&spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (id, shape) in spec.param_shapes() {
            assert_eq!(ps.tensor(&id).unwrap().shape(), &shape[..], "{id}");
        }
        assert_eq!(ps.tensor("L2.W").unwrap().data(), &[1.0, 1.0]);
        assert!(ps.tensor("L1.W").unwrap().data().iter().all(|v| v.abs() <= (1.0f64 / 9.0).sqrt()));
    }

    #[test]
    fn convexity_plan_exempts_first_layer_and_input_links() {
        let plan = ConstraintPlan::convexity(&two_layer());
        let ids: Vec<_> = plan.ids().collect();
        assert_eq!(ids, ["L2.W", "L3.A", "L3.W"]);
    }

    #[test]
    fn projection_clips_constrained_entries_only() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("a", Tensor::from_f64(&[2], &[-1.0, 2.0]).unwrap(), false);
        ps.insert("b", Tensor::from_f64(&[1], &[-3.0]).unwrap(), false);
        let plan = ConstraintPlan::empty().with("a");
        project_convex(&mut ps, &plan).unwrap();
        assert_eq!(ps.tensor("a").unwrap().data(), &[0.0, 2.0]);
        assert_eq!(ps.tensor("b").unwrap().data(), &[-3.0]);
        let before = ps.clone();
        project_convex(&mut ps, &plan).unwrap();
        assert_eq!(ps, before);
        assert!(matches!(project_convex(&mut ps, &plan.with("zz")), Err(Error::UnknownParam(_))));
    }
}
