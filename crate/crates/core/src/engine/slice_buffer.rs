use crate::error::{Error, Result};

/// Incoming slice for [`SliceBuffer::push`].
#[derive(Clone, Copy, Debug)]
pub enum SliceData<'a> {
    /// `Z` rows of `X` pixels, row-major.
    Pixels(&'a [i8]),
    /// A slice outside the feature map; reads back as zeros, nothing stored.
    VirtualZero,
}

/// On-chip cache of `K + 1` input slices.
///
/// Logical slot `n` maps to physical slot `(base + n) % (K + 1)`. New slices
/// always land in logical slot `K`; rotating only moves `base`, so the
/// slice that was in slot 1 becomes slot 0 and the old slot 0 becomes the
/// free slot `K`.
pub struct SliceBuffer {
    k: usize,
    z_dim: usize,
    width: usize,
    storage: Vec<i8>,
    zero_slot: Vec<bool>,
    zeros: Vec<i8>,
    base: usize,
    write_slot_free: bool,
    pushed: usize,
    peak_resident: usize,
}

impl SliceBuffer {
    pub fn new(k: usize, z_dim: usize, width: usize) -> Self {
        let slots = k + 1;
        Self {
            k,
            z_dim,
            width,
            storage: vec![0; slots * z_dim * width],
            zero_slot: vec![true; slots],
            zeros: vec![0; width],
            base: 0,
            write_slot_free: true,
            pushed: 0,
            peak_resident: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn slots(&self) -> usize {
        self.k + 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    /// Number of slices pushed so far, virtual ones included.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    #[inline]
    fn physical(&self, logical: usize) -> usize {
        (self.base + logical) % (self.k + 1)
    }

    fn slice_len(&self) -> usize {
        self.z_dim * self.width
    }

    /// Stores a slice in logical slot `K`. The slot must have been freed by
    /// a rotate (or never used).
    pub fn push(&mut self, slice: SliceData<'_>) -> Result<()> {
        if !self.write_slot_free {
            return Err(Error::Protocol("push into slot K before rotating".into()));
        }
        let phys = self.physical(self.k);
        let len = self.slice_len();
        match slice {
            SliceData::Pixels(px) => {
                if px.len() != len {
                    return Err(Error::Protocol(format!(
                        "slice has {} pixels, buffer rows hold {len}",
                        px.len()
                    )));
                }
                self.storage[phys * len..(phys + 1) * len].copy_from_slice(px);
                self.zero_slot[phys] = false;
            }
            SliceData::VirtualZero => self.zero_slot[phys] = true,
        }
        self.write_slot_free = false;
        self.pushed += 1;
        self.peak_resident = self.peak_resident.max(self.resident_pixels());
        Ok(())
    }

    pub fn rotate(&mut self) {
        self.base = (self.base + 1) % (self.k + 1);
        self.write_slot_free = true;
    }

    /// Row `z` of logical slot `i`; all zeros for a virtual slice.
    #[inline]
    pub fn read_row(&self, i: usize, z: usize) -> &[i8] {
        debug_assert!(i <= self.k && z < self.z_dim);
        let phys = self.physical(i);
        if self.zero_slot[phys] {
            &self.zeros
        } else {
            let start = phys * self.slice_len() + z * self.width;
            &self.storage[start..start + self.width]
        }
    }

    pub fn is_virtual(&self, i: usize) -> bool {
        self.zero_slot[self.physical(i)]
    }

    /// Pixels of real (non-virtual) slices currently held.
    pub fn resident_pixels(&self) -> usize {
        self.zero_slot.iter().filter(|&&z| !z).count() * self.slice_len()
    }

    pub fn peak_resident_pixels(&self) -> usize {
        self.peak_resident
    }

    /// Upper bound on resident pixels: `(K + 1) * Z * X`.
    pub fn capacity_pixels(&self) -> usize {
        (self.k + 1) * self.slice_len()
    }
}

/// `out[x] = V1[x + j]` where `V1` is `v` padded by `K/2` zeros on both
/// sides.
pub fn select_window(v: &[i8], j: usize, k: usize) -> Vec<i8> {
    let mut out = vec![0; v.len()];
    select_window_into(v, j, k, &mut out);
    out
}

#[inline]
pub fn select_window_into(v: &[i8], j: usize, k: usize, out: &mut [i8]) {
    let n = v.len();
    debug_assert_eq!(out.len(), n);
    let half = k / 2;
    if j >= half {
        let s = (j - half).min(n);
        let m = n.saturating_sub(s);
        out[..m].copy_from_slice(&v[s..s + m]);
        out[m..].fill(0);
    } else {
        let s = (half - j).min(n);
        out[..s].fill(0);
        out[s..].copy_from_slice(&v[..n - s]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_of(v: i8, z: usize, x: usize) -> Vec<i8> {
        (0..z * x).map(|n| v.wrapping_add(n as i8)).collect()
    }

    #[test]
    fn push_then_read_slot_k() {
        let mut b = SliceBuffer::new(3, 2, 4);
        let s = slice_of(10, 2, 4);
        b.push(SliceData::Pixels(&s)).unwrap();
        assert_eq!(b.read_row(3, 0), &s[0..4]);
        assert_eq!(b.read_row(3, 1), &s[4..8]);
    }

    #[test]
    fn virtual_zero_reads_zero() {
        let mut b = SliceBuffer::new(3, 2, 4);
        b.push(SliceData::Pixels(&slice_of(9, 2, 4))).unwrap();
        b.rotate();
        b.push(SliceData::VirtualZero).unwrap();
        assert_eq!(b.read_row(3, 1), &[0, 0, 0, 0]);
        assert!(b.is_virtual(3));
        assert_eq!(b.resident_pixels(), 8);
    }

    #[test]
    fn fifo_order_after_k_plus_one_pushes() {
        let k = 3;
        let mut b = SliceBuffer::new(k, 1, 2);
        for s in 0..=k {
            if s > 0 {
                b.rotate();
            }
            b.push(SliceData::Pixels(&[s as i8, 0])).unwrap();
        }
        for i in 0..=k {
            assert_eq!(b.read_row(i, 0)[0], i as i8);
        }
    }

    #[test]
    fn push_without_rotate_is_protocol_error() {
        let mut b = SliceBuffer::new(1, 1, 1);
        b.push(SliceData::VirtualZero).unwrap();
        assert!(matches!(b.push(SliceData::VirtualZero), Err(Error::Protocol(_))));
        b.rotate();
        assert!(b.push(SliceData::Pixels(&[1, 2])).is_err());
    }

    #[test]
    fn rotation_moves_only_the_pointer() {
        let k = 3;
        let mut b = SliceBuffer::new(k, 1, 3);
        for s in 0..=k {
            b.push(SliceData::Pixels(&[s as i8 * 3, 1, 2])).unwrap();
            b.rotate();
        }
        let before_storage = b.storage.clone();
        let before: Vec<Vec<i8>> = (0..=k).map(|i| b.read_row(i, 0).to_vec()).collect();
        b.rotate();
        assert_eq!(b.storage, before_storage);
        for i in 0..k {
            assert_eq!(b.read_row(i, 0), before[i + 1].as_slice());
        }
        for _ in 0..k {
            b.rotate();
        }
        let after: Vec<Vec<i8>> = (0..=k).map(|i| b.read_row(i, 0).to_vec()).collect();
        assert_eq!(after, before);
    }

    #[test]
    fn residency_never_exceeds_capacity() {
        let mut b = SliceBuffer::new(3, 4, 5);
        for _ in 0..20 {
            b.push(SliceData::Pixels(&[1; 20])).unwrap();
            b.rotate();
        }
        assert_eq!(b.peak_resident_pixels(), b.capacity_pixels());
        assert_eq!(b.capacity_pixels(), 4 * 4 * 5);
    }

    #[test]
    fn window_selection() {
        let v = [1, 2, 3, 4];
        assert_eq!(select_window(&v, 1, 3), vec![1, 2, 3, 4]);
        assert_eq!(select_window(&v, 0, 3), vec![0, 1, 2, 3]);
        assert_eq!(select_window(&v, 2, 3), vec![2, 3, 4, 0]);
        assert_eq!(select_window(&v, 0, 1), vec![1, 2, 3, 4]);
        assert_eq!(select_window(&v, 0, 5), vec![0, 0, 1, 2]);
        assert_eq!(select_window(&v, 4, 5), vec![3, 4, 0, 0]);
        assert_eq!(select_window(&[7], 0, 5), vec![0]);
        assert_eq!(select_window(&[7], 4, 5), vec![0]);
    }
}
