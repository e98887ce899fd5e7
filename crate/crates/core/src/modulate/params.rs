use crate::error::{Error, Result};

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered collection of named parameters, addressed by insertion index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    items: Vec<Param>,
}

impl Params {
    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.items.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        self.items.len() - 1
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Param] {
        &self.items
    }

    pub fn get(&self, id: usize) -> &[f64] {
        &self.items[id].data
    }

    pub fn get_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.items[id].data
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.items.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.items.iter_mut().find(|p| p.name == name)
    }

    pub fn total(&self) -> usize {
        self.items.iter().map(|p| p.data.len()).sum()
    }

    /// Zeroed gradient buffers with this layout.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }

    /// Concatenated values in insertion order.
    pub fn flatten(&self) -> Vec<f64> {
        self.items.iter().flat_map(|p| p.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for p in &mut self.items {
            let n = p.data.len();
            p.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Replace values from another collection with the same names and shapes.
    pub fn load(&mut self, other: &[Param]) -> Result<()> {
        if other.len() != self.items.len() {
            return Err(Error::format(
                "tensors",
                format!("expected {} tensors, found {}", self.items.len(), other.len()),
            ));
        }
        for (mine, theirs) in self.items.iter_mut().zip(other) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(Error::format(
                    format!("tensor {}", theirs.name),
                    format!("expected {} with shape {:?}", mine.name, mine.shape),
                ));
            }
            mine.data.clone_from(&theirs.data);
        }
        Ok(())
    }
}
