//! Axis-labeled tensors.
//!
//! Every axis is named: either the copy axis of a latent declaration or a
//! plate axis. Binary operations align operands by axis name and broadcast
//! over the sorted union, so expression evaluation never depends on the
//! textual order in which axes were introduced. Axes are kept sorted by
//! `AxisId` as a structural invariant, which makes layouts (and therefore
//! float summation orders) deterministic.

use crate::graph::{LatentId, PlateId};
use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn, Zip};
use thiserror::Error;

/// Name of a tensor axis: the copy axis of one latent declaration, or one
/// plate. Copy axes sort before plate axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AxisId {
    Copy(LatentId),
    Plate(PlateId),
}

impl AxisId {
    pub fn is_copy(self) -> bool {
        matches!(self, AxisId::Copy(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("axis size mismatch on {axis:?}: {left} vs {right}")]
    SizeMismatch { axis: AxisId, left: usize, right: usize },
    #[error("gather index {index} out of bounds for axis of size {size}")]
    GatherOutOfBounds { index: i64, size: usize },
    #[error("gather table must have exactly one plate axis, found {found}")]
    GatherTableShape { found: usize },
}

/// Dense f64 tensor over named axes (sorted, distinct).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    axes: Vec<AxisId>,
    data: ArrayD<f64>,
}

/// Dense integer tensor; used for index-lookup covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct IntTensor {
    axes: Vec<AxisId>,
    data: ArrayD<i64>,
}

fn assert_sorted(axes: &[AxisId]) {
    debug_assert!(
        axes.windows(2).all(|w| w[0] < w[1]),
        "tensor axes must be sorted and distinct: {axes:?}"
    );
}

/// Sorted union of two sorted axis lists.
pub fn union_axes(a: &[AxisId], b: &[AxisId]) -> Vec<AxisId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j >= b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i >= a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    out
}

impl Tensor {
    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            axes: Vec::new(),
            data: ArrayD::from_elem(IxDyn(&[]), v),
        }
    }

    /// Wraps data whose dimensions follow `axes` (already sorted).
    pub fn from_data(axes: Vec<AxisId>, data: ArrayD<f64>) -> Tensor {
        assert_sorted(&axes);
        assert_eq!(axes.len(), data.ndim());
        Tensor { axes, data }
    }

    /// Accepts axes in any order and permutes the data into sorted layout.
    pub fn from_unsorted(axes: Vec<AxisId>, data: ArrayD<f64>) -> Tensor {
        assert_eq!(axes.len(), data.ndim());
        let mut perm: Vec<usize> = (0..axes.len()).collect();
        perm.sort_by_key(|&i| axes[i]);
        let sorted_axes: Vec<AxisId> = perm.iter().map(|&i| axes[i]).collect();
        assert_sorted(&sorted_axes);
        let data = data.permuted_axes(IxDyn(&perm)).as_standard_layout().to_owned();
        Tensor { axes: sorted_axes, data }
    }

    pub fn fill(axes: Vec<AxisId>, sizes: &[usize], v: f64) -> Tensor {
        assert_sorted(&axes);
        Tensor { axes, data: ArrayD::from_elem(IxDyn(sizes), v) }
    }

    pub fn axes(&self) -> &[AxisId] {
        &self.axes
    }

    pub fn data(&self) -> &ArrayD<f64> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn size_of(&self, axis: AxisId) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis).map(|i| self.data.shape()[i])
    }

    fn axis_pos(&self, axis: AxisId) -> usize {
        self.axes
            .iter()
            .position(|&a| a == axis)
            .unwrap_or_else(|| panic!("axis {axis:?} not present in {:?}", self.axes))
    }

    /// View of the data expanded (with length-1 axes) to a sorted superset
    /// of this tensor's axes.
    fn expand_view<'a>(&'a self, target: &[AxisId]) -> ArrayViewD<'a, f64> {
        let mut v = self.data.view();
        let mut have = 0;
        for (i, ax) in target.iter().enumerate() {
            if have < self.axes.len() && self.axes[have] == *ax {
                have += 1;
            } else {
                v = v.insert_axis(Axis(i));
            }
        }
        debug_assert_eq!(have, self.axes.len(), "target must contain all axes");
        v
    }

    /// Elementwise combination over the broadcast union of the two axis sets.
    pub fn zip_with(
        &self,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let axes = union_axes(&self.axes, &other.axes);
        let mut sizes = Vec::with_capacity(axes.len());
        for &ax in &axes {
            let l = self.size_of(ax);
            let r = other.size_of(ax);
            let size = match (l, r) {
                (Some(a), Some(b)) if a != b => {
                    return Err(TensorError::SizeMismatch { axis: ax, left: a, right: b })
                }
                (Some(a), _) => a,
                (_, Some(b)) => b,
                (None, None) => unreachable!(),
            };
            sizes.push(size);
        }
        let shape = IxDyn(&sizes);
        let va = self.expand_view(&axes);
        let vb = other.expand_view(&axes);
        let ba = va.broadcast(shape.clone()).expect("broadcast");
        let bb = vb.broadcast(shape).expect("broadcast");
        let data = Zip::from(&ba).and(&bb).map_collect(|&x, &y| f(x, y));
        Ok(Tensor { axes, data })
    }

    /// Elementwise combination of three tensors over their broadcast union.
    pub fn zip3_with(
        &self,
        b: &Tensor,
        c: &Tensor,
        f: impl Fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let axes = union_axes(&union_axes(&self.axes, &b.axes), &c.axes);
        let mut sizes = Vec::with_capacity(axes.len());
        for &ax in &axes {
            let mut size = None;
            for t in [self, b, c] {
                if let Some(s) = t.size_of(ax) {
                    match size {
                        Some(prev) if prev != s => {
                            return Err(TensorError::SizeMismatch { axis: ax, left: prev, right: s })
                        }
                        _ => size = Some(s),
                    }
                }
            }
            sizes.push(size.expect("axis came from one of the inputs"));
        }
        let shape = IxDyn(&sizes);
        let va = self.expand_view(&axes);
        let vb = b.expand_view(&axes);
        let vc = c.expand_view(&axes);
        let ba = va.broadcast(shape.clone()).expect("broadcast");
        let bb = vb.broadcast(shape.clone()).expect("broadcast");
        let bc = vc.broadcast(shape).expect("broadcast");
        let data = Zip::from(&ba)
            .and(&bb)
            .and(&bc)
            .map_collect(|&x, &y, &z| f(x, y, z));
        Ok(Tensor { axes, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            axes: self.axes.clone(),
            data: self.data.mapv(|x| f(x)),
        }
    }

    /// Sum over one axis.
    pub fn sum_over(&self, axis: AxisId) -> Tensor {
        let i = self.axis_pos(axis);
        let data = self.data.sum_axis(Axis(i));
        let mut axes = self.axes.clone();
        axes.remove(i);
        Tensor { axes, data }
    }

    /// Sum over every plate axis, keeping copy axes.
    pub fn sum_plates(&self) -> Tensor {
        let mut t = self.clone();
        while let Some(&ax) = t.axes.iter().find(|a| !a.is_copy()) {
            t = t.sum_over(ax);
        }
        t
    }

    /// log Σ exp over one axis with per-slice max subtraction. Slices that
    /// are uniformly -inf stay -inf (no NaN).
    pub fn logsumexp_over(&self, axis: AxisId) -> Tensor {
        let i = self.axis_pos(axis);
        let m = self
            .data
            .fold_axis(Axis(i), f64::NEG_INFINITY, |&acc, &x| acc.max(x));
        let mut s = ArrayD::<f64>::zeros(m.raw_dim());
        for sub in self.data.axis_iter(Axis(i)) {
            Zip::from(&mut s).and(&sub).and(&m).for_each(|acc, &x, &mm| {
                if mm > f64::NEG_INFINITY {
                    *acc += (x - mm).exp();
                }
            });
        }
        let data = Zip::from(&m).and(&s).map_collect(|&mm, &ss| {
            if mm > f64::NEG_INFINITY {
                mm + ss.ln()
            } else {
                f64::NEG_INFINITY
            }
        });
        let mut axes = self.axes.clone();
        axes.remove(i);
        Tensor { axes, data }
    }

    /// Fix one axis at index `i`, dropping it.
    pub fn select(&self, axis: AxisId, i: usize) -> Tensor {
        let pos = self.axis_pos(axis);
        let data = self.data.index_axis(Axis(pos), i).to_owned();
        let mut axes = self.axes.clone();
        axes.remove(pos);
        Tensor { axes, data }
    }

    /// Restrict one axis to the half-open index range `start..end`, keeping
    /// the axis in place.
    pub fn slice_range(&self, axis: AxisId, start: usize, end: usize) -> Tensor {
        let pos = self.axis_pos(axis);
        let data = self
            .data
            .slice_axis(Axis(pos), ndarray::Slice::from(start..end))
            .to_owned();
        Tensor { axes: self.axes.clone(), data }
    }

    /// Replace one axis id with another, leaving the data untouched. The
    /// renamed axis must keep the same sorted position relative to the rest.
    pub fn rename_axis(&self, from: AxisId, to: AxisId) -> Tensor {
        let pos = self.axis_pos(from);
        let mut axes = self.axes.clone();
        axes[pos] = to;
        assert_sorted(&axes);
        Tensor { axes, data: self.data.clone() }
    }

    /// Materialize a broadcast of this tensor onto a superset of axes with
    /// the given sizes.
    pub fn broadcast_to(&self, axes: &[AxisId], sizes: &[usize]) -> Tensor {
        assert_sorted(axes);
        let v = self.expand_view(axes);
        let data = v.broadcast(IxDyn(sizes)).expect("broadcast").to_owned();
        Tensor { axes: axes.to_vec(), data }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }
}

impl IntTensor {
    pub fn from_data(axes: Vec<AxisId>, data: ArrayD<i64>) -> IntTensor {
        assert_sorted(&axes);
        assert_eq!(axes.len(), data.ndim());
        IntTensor { axes, data }
    }

    pub fn from_unsorted(axes: Vec<AxisId>, data: ArrayD<i64>) -> IntTensor {
        assert_eq!(axes.len(), data.ndim());
        let mut perm: Vec<usize> = (0..axes.len()).collect();
        perm.sort_by_key(|&i| axes[i]);
        let sorted: Vec<AxisId> = perm.iter().map(|&i| axes[i]).collect();
        assert_sorted(&sorted);
        let data = data.permuted_axes(IxDyn(&perm)).as_standard_layout().to_owned();
        IntTensor { axes: sorted, data }
    }

    pub fn axes(&self) -> &[AxisId] {
        &self.axes
    }

    pub fn data(&self) -> &ArrayD<i64> {
        &self.data
    }

    /// Promote to a float tensor.
    pub fn to_real(&self) -> Tensor {
        Tensor {
            axes: self.axes.clone(),
            data: self.data.mapv(|x| x as f64),
        }
    }

    /// Restrict one axis to the half-open index range `start..end`, keeping
    /// the axis in place. Axes this tensor does not carry are a no-op via
    /// `size_of` checks at the call site.
    pub fn slice_range(&self, axis: AxisId, start: usize, end: usize) -> IntTensor {
        let pos = self
            .axes
            .iter()
            .position(|&a| a == axis)
            .unwrap_or_else(|| panic!("axis {axis:?} not present in {:?}", self.axes));
        let data = self
            .data
            .slice_axis(Axis(pos), ndarray::Slice::from(start..end))
            .to_owned();
        IntTensor { axes: self.axes.clone(), data }
    }

    pub fn size_of(&self, axis: AxisId) -> Option<usize> {
        self.axes.iter().position(|&a| a == axis).map(|i| self.data.shape()[i])
    }
}

/// Index lookup: replaces the single plate axis of `table` by the axes of
/// `index`, reading `table` at the positions `index` holds.
pub fn gather(table: &Tensor, index: &IntTensor) -> Result<Tensor, TensorError> {
    let plate_positions: Vec<usize> = table
        .axes
        .iter()
        .enumerate()
        .filter(|(_, a)| !a.is_copy())
        .map(|(i, _)| i)
        .collect();
    if plate_positions.len() != 1 {
        return Err(TensorError::GatherTableShape { found: plate_positions.len() });
    }
    let table_plate_pos = plate_positions[0];
    let plate_size = table.data.shape()[table_plate_pos];
    if let Some(&bad) = index.data.iter().find(|&&v| v < 0 || v as usize >= plate_size) {
        return Err(TensorError::GatherOutOfBounds { index: bad, size: plate_size });
    }

    let kept: Vec<AxisId> = table
        .axes
        .iter()
        .copied()
        .filter(|a| a.is_copy())
        .collect();
    let out_axes = union_axes(&kept, &index.axes);
    let mut out_sizes = Vec::with_capacity(out_axes.len());
    for &ax in &out_axes {
        let size = table
            .size_of(ax)
            .or_else(|| index.axes.iter().position(|&a| a == ax).map(|i| index.data.shape()[i]))
            .expect("axis size");
        out_sizes.push(size);
    }
    // Position of each output axis inside the table / index coordinates.
    let table_pos: Vec<Option<usize>> = out_axes
        .iter()
        .map(|ax| table.axes.iter().position(|a| a == ax))
        .collect();
    let index_pos: Vec<Option<usize>> = out_axes
        .iter()
        .map(|ax| index.axes.iter().position(|a| a == ax))
        .collect();

    let mut table_idx = vec![0usize; table.axes.len()];
    let mut index_idx = vec![0usize; index.axes.len()];
    let data = ArrayD::from_shape_fn(IxDyn(&out_sizes), |ix| {
        for (o, &p) in index_pos.iter().enumerate() {
            if let Some(p) = p {
                index_idx[p] = ix[o];
            }
        }
        let j = index.data[IxDyn(&index_idx)] as usize;
        for (o, &p) in table_pos.iter().enumerate() {
            if let Some(p) = p {
                table_idx[p] = ix[o];
            }
        }
        table_idx[table_plate_pos] = j;
        table.data[IxDyn(&table_idx)]
    });
    // from_shape_fn with a capturing FnMut closure: scratch buffers above are
    // reused; the traversal order is row-major so this is deterministic.
    Ok(Tensor { axes: out_axes, data })
}
