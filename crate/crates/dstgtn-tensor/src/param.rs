//! Trainable parameters and the model-wide parameter registry.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::element::Element;
use crate::tensor::{check_shape, Tensor};
use crate::TensorError;

/// A named trainable tensor. The value buffer is replaced wholesale on
/// optimizer updates; gradients accumulate into a persistent buffer until
/// cleared.
pub struct Parameter<T: Element> {
    name: String,
    shape: Vec<usize>,
    value: RefCell<Rc<[T]>>,
    grad: RefCell<Vec<T>>,
}

impl<T: Element> Parameter<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Result<Rc<Self>, TensorError> {
        check_shape("Parameter::new", shape, values.len())?;
        let len = values.len();
        Ok(Rc::new(Parameter {
            name: name.into(),
            shape: shape.to_vec(),
            value: RefCell::new(values.into()),
            grad: RefCell::new(vec![T::zero(); len]),
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tracked leaf tensor sharing the current value buffer. Gradients from
    /// a backward pass accumulate into this parameter.
    pub fn leaf(self: &Rc<Self>) -> Tensor<T> {
        Tensor::param_leaf(self.clone())
    }

    /// Untracked view of the current values.
    pub fn constant(&self) -> Tensor<T> {
        Tensor::from_parts(self.shape.clone(), self.value.borrow().clone(), None)
    }

    pub fn value(&self) -> Rc<[T]> {
        self.value.borrow().clone()
    }

    pub fn set_value(&self, values: Vec<T>) {
        assert_eq!(values.len(), self.len(), "set_value length mismatch on '{}'", self.name);
        *self.value.borrow_mut() = values.into();
    }

    pub fn coord(&self, index: usize) -> T {
        self.value.borrow()[index]
    }

    /// Rewrites one coordinate (copy-on-write); used by finite differencing.
    pub fn set_coord(&self, index: usize, v: T) {
        let mut buf = self.value.borrow().to_vec();
        buf[index] = v;
        *self.value.borrow_mut() = buf.into();
    }

    pub fn grad(&self) -> Vec<T> {
        self.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        for g in self.grad.borrow_mut().iter_mut() {
            *g = T::zero();
        }
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut acc = self.grad.borrow_mut();
        debug_assert_eq!(acc.len(), g.len());
        for (a, &v) in acc.iter_mut().zip(g) {
            *a = *a + v;
        }
    }
}

/// Ordered collection of a model's parameters. Registration order is the
/// canonical order for optimizer updates and checkpoint serialization; names
/// must be unique.
#[derive(Default)]
pub struct ParamRegistry<T: Element> {
    items: Vec<Rc<Parameter<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Element> ParamRegistry<T> {
    pub fn new() -> Self {
        ParamRegistry {
            items: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, param: Rc<Parameter<T>>) -> Result<Rc<Parameter<T>>, TensorError> {
        if self.index.contains_key(param.name()) {
            return Err(TensorError::DuplicateParameter {
                name: param.name().to_string(),
            });
        }
        self.index.insert(param.name().to_string(), self.items.len());
        self.items.push(param.clone());
        Ok(param)
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<T>) -> Result<Rc<Parameter<T>>, TensorError> {
        self.register(Parameter::new(name, shape, values)?)
    }

    pub fn get(&self, name: &str) -> Option<&Rc<Parameter<T>>> {
        self.index.get(name).map(|&i| &self.items[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Rc<Parameter<T>>> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.items.iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.items {
            p.zero_grad();
        }
    }
}
