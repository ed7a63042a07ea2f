//! 2-D discrete Fourier transforms and the amplitude/phase view of real images.
//!
//! The forward transform is unnormalized and the inverse carries the `1/(HW)`
//! factor, so `dft_inverse(dft_forward(x)) == x` up to rounding. Row and column
//! passes are delegated to `rustfft`, which handles every length (mixed radix
//! for smooth sizes, Bluestein/Rader for primes).
//!
//! Spectra of real images are Hermitian: `F(u, v) = conj(F(-u, -v))`. The
//! decomposition enforces that identity exactly (it only removes rounding
//! noise), which keeps the phase plane exactly antisymmetric. Linear phase
//! interpolation then preserves Hermitian structure everywhere except on the
//! self-conjugate bins, see [`snap_self_conjugate_phase`].

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::error::{invalid, Result};
use crate::plane::{ComplexPlane, Image, ImagePlane};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Amplitude and phase planes of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralChannel {
    pub amplitude: ImagePlane,
    pub phase: ImagePlane,
}

impl SpectralChannel {
    pub fn new(amplitude: ImagePlane, phase: ImagePlane) -> Result<Self> {
        amplitude.check_same_dims(&phase)?;
        if let Some(a) = amplitude.values().iter().find(|a| a.is_nan() || **a < 0.0) {
            return Err(invalid(format!("amplitude must be nonnegative, found {a}")));
        }
        Ok(Self { amplitude, phase })
    }
}

/// Per-channel amplitude/phase decomposition of a real image.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    channels: Vec<SpectralChannel>,
}

impl SpectralImage {
    pub fn new(channels: Vec<SpectralChannel>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| invalid("spectral image needs at least one channel"))?;
        for ch in &channels[1..] {
            first.amplitude.check_same_dims(&ch.amplitude)?;
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[SpectralChannel] {
        &self.channels
    }

    pub fn channels_mut(&mut self) -> &mut [SpectralChannel] {
        &mut self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].amplitude.dims()
    }
}

fn transform_2d(height: usize, width: usize, data: &mut [Complex64], direction: FftDirection) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let row_fft = planner.plan_fft(width, direction);
        let col_fft = planner.plan_fft(height, direction);
        let mut scratch = vec![
            Complex64::default();
            row_fft.get_inplace_scratch_len().max(col_fft.get_inplace_scratch_len())
        ];
        for row in data.chunks_exact_mut(width) {
            row_fft.process_with_scratch(row, &mut scratch);
        }
        let mut column = vec![Complex64::default(); height];
        for c in 0..width {
            for r in 0..height {
                column[r] = data[r * width + c];
            }
            col_fft.process_with_scratch(&mut column, &mut scratch);
            for r in 0..height {
                data[r * width + c] = column[r];
            }
        }
    });
}

/// Unnormalized forward 2-D DFT of a real plane.
pub fn dft_forward(plane: &ImagePlane) -> ComplexPlane {
    let (h, w) = plane.dims();
    let mut data: Vec<Complex64> = plane.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(h, w, &mut data, FftDirection::Forward);
    ComplexPlane::new(h, w, data).expect("dimensions carried over from a valid plane")
}

/// Inverse 2-D DFT including the `1/(HW)` factor, keeping the complex result.
pub fn dft_inverse_complex(spectrum: &ComplexPlane) -> ComplexPlane {
    let (h, w) = spectrum.dims();
    let mut data = spectrum.values().to_vec();
    transform_2d(h, w, &mut data, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    for z in &mut data {
        *z *= scale;
    }
    ComplexPlane::new(h, w, data).expect("dimensions carried over from a valid plane")
}

/// Inverse 2-D DFT; the imaginary residue is discarded.
pub fn dft_inverse(spectrum: &ComplexPlane) -> ImagePlane {
    dft_inverse_complex(spectrum).real()
}

#[inline]
fn mirror_index(h: usize, w: usize, r: usize, c: usize) -> (usize, usize) {
    ((h - r) % h, (w - c) % w)
}

/// Replaces `F` by its Hermitian part `(F(k) + conj F(-k)) / 2`.
///
/// For the transform of a real plane this only removes rounding error. Bins
/// that are their own mirror get an exact `+0.0` imaginary part.
pub fn hermitian_project(spectrum: &mut ComplexPlane) {
    let (h, w) = spectrum.dims();
    let values = spectrum.values_mut();
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            let (mr, mc) = mirror_index(h, w, r, c);
            let m = mr * w + mc;
            if k == m {
                values[k].im = 0.0;
            } else if k < m {
                let avg = (values[k] + values[m].conj()) * 0.5;
                values[k] = avg;
                values[m] = avg.conj();
            }
        }
    }
}

/// Polar split of a complex plane: `A = |F|`, `P = atan2(Im F, Re F)`, with `P = 0` where `A = 0`.
pub fn polar(spectrum: &ComplexPlane) -> (ImagePlane, ImagePlane) {
    let (h, w) = spectrum.dims();
    let mut amp = Vec::with_capacity(h * w);
    let mut phase = Vec::with_capacity(h * w);
    for z in spectrum.values() {
        let a = z.norm();
        amp.push(a);
        phase.push(if a == 0.0 { 0.0 } else { z.im.atan2(z.re) });
    }
    (
        ImagePlane::new(h, w, amp).expect("valid dims"),
        ImagePlane::new(h, w, phase).expect("valid dims"),
    )
}

/// Amplitude and phase spectra of a real plane.
///
/// Phases lie in `(-π, π]`, except that the mirror of an exactly real negative
/// coefficient carries `-π` so the phase plane stays exactly antisymmetric.
pub fn decompose(plane: &ImagePlane) -> (ImagePlane, ImagePlane) {
    let mut spectrum = dft_forward(plane);
    hermitian_project(&mut spectrum);
    polar(&spectrum)
}

/// `A · (cos P + j sin P)`.
pub fn recompose(amplitude: &ImagePlane, phase: &ImagePlane) -> Result<ComplexPlane> {
    amplitude.check_same_dims(phase)?;
    let mut values = Vec::with_capacity(amplitude.values().len());
    for (&a, &p) in amplitude.values().iter().zip(phase.values()) {
        if a.is_nan() || a < 0.0 {
            return Err(invalid(format!("amplitude must be nonnegative, found {a}")));
        }
        values.push(if a == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(a, p)
        });
    }
    ComplexPlane::new(amplitude.height(), amplitude.width(), values)
}

/// Per-channel forward transform and decomposition.
pub fn spectral_of_image(image: &Image) -> SpectralImage {
    let channels = image
        .planes()
        .iter()
        .map(|plane| {
            let (amplitude, phase) = decompose(plane);
            SpectralChannel { amplitude, phase }
        })
        .collect();
    SpectralImage { channels }
}

/// Per-channel recomposition and inverse transform. Values are not clamped.
pub fn image_of_spectral(spectral: &SpectralImage) -> Image {
    let planes = spectral
        .channels
        .iter()
        .map(|ch| {
            let spectrum = recompose(&ch.amplitude, &ch.phase)
                .expect("SpectralChannel invariants guarantee a valid recomposition");
            dft_inverse(&spectrum)
        })
        .collect();
    Image::new(planes).expect("channels share dimensions")
}

/// Reconstruction with every phase set to 0.
pub fn reconstruct_amplitude_only(spectral: &SpectralImage) -> Image {
    let mut s = spectral.clone();
    for ch in &mut s.channels {
        ch.phase.values_mut().fill(0.0);
    }
    image_of_spectral(&s)
}

/// Reconstruction with every amplitude set to 1.
pub fn reconstruct_phase_only(spectral: &SpectralImage) -> Image {
    let mut s = spectral.clone();
    for ch in &mut s.channels {
        ch.amplitude.values_mut().fill(1.0);
    }
    image_of_spectral(&s)
}

/// Indices `(u, v)` that are their own mirror: `u ∈ {0, H/2}`, `v ∈ {0, W/2}`
/// (the half-size entries only for even sizes).
pub fn self_conjugate_bins(height: usize, width: usize) -> Vec<(usize, usize)> {
    let rows: &[usize] = if height.is_multiple_of(2) && height > 1 { &[0, height / 2] } else { &[0] };
    let cols: &[usize] = if width.is_multiple_of(2) && width > 1 { &[0, width / 2] } else { &[0] };
    rows.iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect()
}

/// Rounds the phase at self-conjugate bins to the nearer of `0` and `π`.
///
/// A real image can only have real coefficients at those bins. An interpolated
/// phase such as `(1-λ)·π` would otherwise be projected onto the real axis by
/// the inverse transform and shrink the amplitude there by `|cos P|`.
pub fn snap_self_conjugate_phase(phase: &mut ImagePlane) {
    let (h, w) = phase.dims();
    for (r, c) in self_conjugate_bins(h, w) {
        let p = phase.get(r, c);
        phase.set(r, c, if p.cos() >= 0.0 { 0.0 } else { PI });
    }
}

/// Signed difference `a - b` wrapped into `(-π, π]`.
pub fn wrapped_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        d - 2.0 * PI
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        ImagePlane::from_fn(h, w, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .unwrap()
    }

    #[test]
    fn constant_plane_has_dc_only_spectrum() {
        let c = 0.37;
        let f = dft_forward(&ImagePlane::filled(4, 4, c).unwrap());
        assert!((f.get(0, 0).re - 16.0 * c).abs() < 1e-12);
        for (k, z) in f.values().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {k} = {z}");
        }
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut x = ImagePlane::zeros(5, 6).unwrap();
        x.set(0, 0, 1.0);
        for z in dft_forward(&x).values() {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn dc_only_spectrum_inverts_to_constant() {
        let (h, w, c) = (3, 7, 0.25);
        let mut values = vec![Complex64::default(); h * w];
        values[0] = Complex64::new((h * w) as f64 * c, 0.0);
        let x = dft_inverse(&ComplexPlane::new(h, w, values).unwrap());
        assert!(x.values().iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn three_four_five() {
        let z = ComplexPlane::new(1, 1, vec![Complex64::new(3.0, 4.0)]).unwrap();
        let (a, p) = polar(&z);
        assert!((a.get(0, 0) - 5.0).abs() < 1e-12);
        assert!((p.get(0, 0) - 4f64.atan2(3.0)).abs() < 1e-12);
        assert!((p.get(0, 0) - 0.9273).abs() < 1e-4);

        let back = recompose(&ImagePlane::filled(1, 1, 5.0).unwrap(), &ImagePlane::filled(1, 1, 0.9273).unwrap())
            .unwrap();
        assert!((back.get(0, 0) - Complex64::new(3.0, 4.0)).norm() < 1e-4);
    }

    #[test]
    fn positive_real_has_zero_phase_and_zero_amplitude_has_zero_phase() {
        let z = ComplexPlane::new(1, 2, vec![Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)]).unwrap();
        let (_, p) = polar(&z);
        assert_eq!(p.values(), &[0.0, 0.0]);
    }

    #[test]
    fn recompose_rejects_negative_amplitude_and_zeroes_vanishing_bins() {
        let a = ImagePlane::new(1, 2, vec![-1.0, 0.0]).unwrap();
        let p = ImagePlane::new(1, 2, vec![0.0, 1.3]).unwrap();
        assert!(recompose(&a, &p).is_err());
        let a = ImagePlane::new(1, 2, vec![0.0, 0.0]).unwrap();
        let z = recompose(&a, &p).unwrap();
        assert_eq!(z.get(0, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(ImagePlane::zeros(0, 4).is_err());
        assert!(ImagePlane::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn decomposition_is_exactly_antisymmetric() {
        for (h, w) in [(8, 8), (6, 10), (7, 5)] {
            let (a, p) = decompose(&plane(h, w, 3));
            for r in 0..h {
                for c in 0..w {
                    let (mr, mc) = mirror_index(h, w, r, c);
                    assert_eq!(a.get(r, c), a.get(mr, mc));
                    if (r, c) != (mr, mc) {
                        assert_eq!(p.get(r, c), -p.get(mr, mc));
                    }
                }
            }
        }
    }

    #[test]
    fn phase_range() {
        let (_, p) = decompose(&plane(12, 9, 11));
        assert!(p.values().iter().all(|&v| v > -PI && v <= PI));
    }

    #[test]
    fn self_conjugate_bins_by_parity() {
        assert_eq!(self_conjugate_bins(4, 4), vec![(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(self_conjugate_bins(5, 4), vec![(0, 0), (0, 2)]);
        assert_eq!(self_conjugate_bins(1, 1), vec![(0, 0)]);
    }

    #[test]
    fn snapping_keeps_zero_and_pi() {
        let mut p = ImagePlane::from_fn(4, 4, |_, _| PI).unwrap();
        p.set(0, 0, 0.3);
        p.set(2, 2, 2.0);
        snap_self_conjugate_phase(&mut p);
        assert_eq!(p.get(0, 0), 0.0);
        assert_eq!(p.get(2, 2), PI);
        assert_eq!(p.get(0, 2), PI);
        assert_eq!(p.get(1, 1), PI);
    }

    #[test]
    fn wrapped_difference() {
        assert!((wrapped_angle_diff(PI - 1e-9, -PI + 1e-9) + 2e-9).abs() < 1e-12);
        assert!((wrapped_angle_diff(0.5, 0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn spectral_shape_contract() {
        let img = Image::new((0..3).map(|s| plane(32, 32, s)).collect()).unwrap();
        let s = spectral_of_image(&img);
        assert_eq!(s.channels().len(), 3);
        assert_eq!(s.dims(), (32, 32));
        let gray = Image::new(vec![plane(32, 32, 9)]).unwrap();
        assert_eq!(spectral_of_image(&gray).channels().len(), 1);
    }

    #[test]
    fn spectral_channel_validation() {
        let a = ImagePlane::filled(2, 2, 1.0).unwrap();
        let p = ImagePlane::zeros(2, 3).unwrap();
        assert!(SpectralChannel::new(a.clone(), p).is_err());
        let neg = ImagePlane::filled(2, 2, -1.0).unwrap();
        assert!(SpectralChannel::new(neg, ImagePlane::zeros(2, 2).unwrap()).is_err());
        assert!(SpectralImage::new(vec![]).is_err());
    }

    #[test]
    fn amplitude_only_peaks_at_origin() {
        let img = Image::new(vec![plane(16, 16, 5)]).unwrap();
        let rec = reconstruct_amplitude_only(&spectral_of_image(&img));
        let p = rec.plane(0);
        let origin = p.get(0, 0);
        assert!(p.values().iter().all(|&v| v <= origin + 1e-12));
    }

    #[test]
    fn reconstructions_of_constant_image() {
        let c = 0.6;
        let img = Image::new(vec![ImagePlane::filled(8, 8, c).unwrap(); 3]).unwrap();
        let s = spectral_of_image(&img);
        // DC-only spectrum already has zero phase.
        let amp_only = reconstruct_amplitude_only(&s);
        assert!(amp_only.max_abs_diff(&img) < 1e-12);
        let phase_only = reconstruct_phase_only(&s);
        for p in phase_only.planes() {
            assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
            assert!(p.values()[1..].iter().all(|v| v.abs() < 1e-12));
        }
        assert_eq!(phase_only.shape(), img.shape());
    }
}
