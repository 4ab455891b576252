use nalgebra::allocator::Allocator;
use nalgebra::{DefaultAllocator, Dim, OMatrix};

/// `dst += a * src` without allocating.
pub(crate) fn add_scaled<R: Dim, C: Dim>(dst: &mut OMatrix<f64, R, C>, a: f64, src: &OMatrix<f64, R, C>)
where
    DefaultAllocator: Allocator<R, C>,
{
    debug_assert_eq!(dst.shape(), src.shape());
    dst.as_mut_slice()
        .iter_mut()
        .zip(src.as_slice())
        .for_each(|(d, s)| *d += a * s);
}
