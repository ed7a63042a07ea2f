//! Semantic-aware spectral mixup.
//!
//! A pair of samples is classified by whether it shares a domain and a label;
//! a [`MixupPolicy`] then says which of the amplitude and phase spectra get
//! interpolated and whether the labels are mixed. The base sample always
//! carries weight `1 - λ` and the partner `λ`, for spectra and labels alike.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledSample;
use crate::error::{invalid, shape_mismatch, Result};
use crate::exec::Exec;
use crate::fourier::{image_of_spectral, snap_self_conjugate_phase, spectral_of_image, SpectralChannel, SpectralImage};
use crate::plane::ImagePlane;
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRelation {
    IntraDomainIntraLabel,
    IntraDomainInterLabel,
    InterDomainIntraLabel,
    InterDomainInterLabel,
}

impl PairRelation {
    pub const ALL: [PairRelation; 4] = [
        PairRelation::IntraDomainIntraLabel,
        PairRelation::IntraDomainInterLabel,
        PairRelation::InterDomainIntraLabel,
        PairRelation::InterDomainInterLabel,
    ];

    pub fn same_domain(self) -> bool {
        matches!(self, Self::IntraDomainIntraLabel | Self::IntraDomainInterLabel)
    }

    pub fn same_label(self) -> bool {
        matches!(self, Self::IntraDomainIntraLabel | Self::InterDomainIntraLabel)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::IntraDomainIntraLabel => "intra_domain_intra_label",
            Self::IntraDomainInterLabel => "intra_domain_inter_label",
            Self::InterDomainIntraLabel => "inter_domain_intra_label",
            Self::InterDomainInterLabel => "inter_domain_inter_label",
        }
    }
}

impl fmt::Display for PairRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the snake_case names, with `-` allowed in place of `_`.
impl std::str::FromStr for PairRelation {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| invalid(format!("unknown pair relation '{s}'")))
    }
}

pub fn classify_pair(domain_i: usize, label_i: usize, domain_j: usize, label_j: usize) -> PairRelation {
    match (domain_i == domain_j, label_i == label_j) {
        (true, true) => PairRelation::IntraDomainIntraLabel,
        (true, false) => PairRelation::IntraDomainInterLabel,
        (false, true) => PairRelation::InterDomainIntraLabel,
        (false, false) => PairRelation::InterDomainInterLabel,
    }
}

/// What to interpolate for one pair relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRow {
    pub amplitude: bool,
    pub phase: bool,
    pub label: bool,
}

impl PolicyRow {
    pub const fn new(amplitude: bool, phase: bool, label: bool) -> Self {
        Self { amplitude, phase, label }
    }
}

/// One [`PolicyRow`] per [`PairRelation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupPolicy {
    pub intra_domain_intra_label: PolicyRow,
    pub intra_domain_inter_label: PolicyRow,
    pub inter_domain_intra_label: PolicyRow,
    pub inter_domain_inter_label: PolicyRow,
}

impl Default for MixupPolicy {
    fn default() -> Self {
        Self::sam()
    }
}

impl MixupPolicy {
    /// Phase only within a domain, both spectra across domains for a shared
    /// label, amplitude only (original label kept) when both differ.
    pub const fn sam() -> Self {
        Self {
            intra_domain_intra_label: PolicyRow::new(false, true, true),
            intra_domain_inter_label: PolicyRow::new(false, true, true),
            inter_domain_intra_label: PolicyRow::new(true, true, true),
            inter_domain_inter_label: PolicyRow::new(true, false, false),
        }
    }

    /// Amplitude-only mixup with mixed labels for every pair.
    pub const fn fact() -> Self {
        let row = PolicyRow::new(true, false, true);
        Self {
            intra_domain_intra_label: row,
            intra_domain_inter_label: row,
            inter_domain_intra_label: row,
            inter_domain_inter_label: row,
        }
    }

    pub fn row(&self, relation: PairRelation) -> PolicyRow {
        match relation {
            PairRelation::IntraDomainIntraLabel => self.intra_domain_intra_label,
            PairRelation::IntraDomainInterLabel => self.intra_domain_inter_label,
            PairRelation::InterDomainIntraLabel => self.inter_domain_intra_label,
            PairRelation::InterDomainInterLabel => self.inter_domain_inter_label,
        }
    }

    pub fn row_mut(&mut self, relation: PairRelation) -> &mut PolicyRow {
        match relation {
            PairRelation::IntraDomainIntraLabel => &mut self.intra_domain_intra_label,
            PairRelation::IntraDomainInterLabel => &mut self.intra_domain_inter_label,
            PairRelation::InterDomainIntraLabel => &mut self.inter_domain_intra_label,
            PairRelation::InterDomainInterLabel => &mut self.inter_domain_inter_label,
        }
    }

    /// The eight amplitude/phase cells in relation order: `[amp, phase]` per row.
    pub fn grid(&self) -> [bool; 8] {
        let mut g = [false; 8];
        for (k, rel) in PairRelation::ALL.iter().enumerate() {
            let row = self.row(*rel);
            g[2 * k] = row.amplitude;
            g[2 * k + 1] = row.phase;
        }
        g
    }

    /// Copy of `self` with one grid cell flipped. The label flag of the
    /// touched row follows the phase flag for inter-label relations (labels
    /// are mixed exactly when semantics are); it stays set for intra-label
    /// relations, where mixing equal one-hots is a no-op.
    pub fn with_flipped_cell(&self, cell: usize) -> Self {
        assert!(cell < 8, "grid has 8 cells");
        let rel = PairRelation::ALL[cell / 2];
        let mut out = *self;
        let row = out.row_mut(rel);
        if cell.is_multiple_of(2) {
            row.amplitude = !row.amplitude;
        } else {
            row.phase = !row.phase;
        }
        row.label = rel.same_label() || row.phase;
        out
    }

    /// `Ours` plus `Model A` … `Model H`, each flipping one cell of the SAM grid.
    pub fn ablation_set() -> Vec<(String, MixupPolicy)> {
        let sam = Self::sam();
        std::iter::once(("Ours".to_string(), sam))
            .chain((0..8).map(|cell| (format!("Model {}", (b'A' + cell as u8) as char), sam.with_flipped_cell(cell))))
            .collect()
    }
}

/// Draws `λ ~ U(0, η)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSampler {
    eta: f64,
}

impl LambdaSampler {
    /// `eta = 0` pins `λ` to zero.
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(invalid(format!("augmentation strength must lie in [0, 1], got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.eta == 0.0 {
            0.0
        } else {
            rng.random::<f64>() * self.eta
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base: usize,
    pub partner: usize,
    pub lambda: f64,
    pub relation: PairRelation,
    pub row: PolicyRow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSample {
    pub image: crate::plane::Image,
    pub label: Vec<f64>,
    pub provenance: Provenance,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("λ must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

fn lerp_planes(base: &ImagePlane, partner: &ImagePlane, lambda: f64) -> Result<ImagePlane> {
    check_lambda(lambda)?;
    base.check_same_dims(partner)?;
    let values = base
        .values()
        .iter()
        .zip(partner.values())
        .map(|(&a, &b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    ImagePlane::new(base.height(), base.width(), values)
}

/// `(1 - λ)·A_i + λ·A_j`.
pub fn mix_amplitude(base: &ImagePlane, partner: &ImagePlane, lambda: f64) -> Result<ImagePlane> {
    lerp_planes(base, partner, lambda)
}

/// `(1 - λ)·P_i + λ·P_j` on the raw phase values, without unwrapping.
pub fn mix_phase(base: &ImagePlane, partner: &ImagePlane, lambda: f64) -> Result<ImagePlane> {
    lerp_planes(base, partner, lambda)
}

/// `(1 - λ)·z_i + λ·z_j` when `mix`, otherwise `z_i`.
pub fn mix_label(base: &[f64], partner: &[f64], lambda: f64, mix: bool) -> Result<Vec<f64>> {
    if base.len() != partner.len() {
        return Err(shape_mismatch(format!("{} classes", base.len()), format!("{} classes", partner.len())));
    }
    check_lambda(lambda)?;
    if !mix {
        return Ok(base.to_vec());
    }
    Ok(base
        .iter()
        .zip(partner)
        .map(|(&a, &b)| (1.0 - lambda) * a + lambda * b)
        .collect())
}

/// Mixes two precomputed spectra according to `row`.
pub fn mix_spectra(base: &SpectralImage, partner: &SpectralImage, row: PolicyRow, lambda: f64) -> Result<SpectralImage> {
    if base.channels().len() != partner.channels().len() {
        return Err(shape_mismatch(
            format!("{} channels", base.channels().len()),
            format!("{} channels", partner.channels().len()),
        ));
    }
    let channels = base
        .channels()
        .iter()
        .zip(partner.channels())
        .map(|(b, p)| {
            let amplitude = if row.amplitude {
                mix_amplitude(&b.amplitude, &p.amplitude, lambda)?
            } else {
                b.amplitude.clone()
            };
            let phase = if row.phase {
                let mut ph = mix_phase(&b.phase, &p.phase, lambda)?;
                snap_self_conjugate_phase(&mut ph);
                ph
            } else {
                b.phase.clone()
            };
            SpectralChannel::new(amplitude, phase)
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralImage::new(channels)
}

fn augment_with_spectra(
    base: &LabeledSample,
    base_spec: &SpectralImage,
    partner: &LabeledSample,
    partner_spec: &SpectralImage,
    policy: &MixupPolicy,
    lambda: f64,
) -> Result<AugmentedSample> {
    base.image.check_same_shape(&partner.image)?;
    let relation = classify_pair(base.domain, base.class, partner.domain, partner.class);
    let row = policy.row(relation);
    let mixed = mix_spectra(base_spec, partner_spec, row, lambda)?;
    let label = mix_label(&base.one_hot(), &partner.one_hot(), lambda, row.label)?;
    Ok(AugmentedSample {
        image: image_of_spectral(&mixed),
        label,
        provenance: Provenance {
            base: base.id,
            partner: partner.id,
            lambda,
            relation,
            row,
        },
    })
}

/// Augments `base` with `partner` under `policy`, using one `λ` for both
/// spectra and the label.
pub fn augment_pair(
    base: &LabeledSample,
    partner: &LabeledSample,
    policy: &MixupPolicy,
    lambda: f64,
) -> Result<AugmentedSample> {
    base.image.check_same_shape(&partner.image)?;
    augment_with_spectra(
        base,
        &spectral_of_image(&base.image),
        partner,
        &spectral_of_image(&partner.image),
        policy,
        lambda,
    )
}

/// A uniformly random partner index for every position; a fixed point is
/// redrawn uniformly among the other positions.
pub fn draw_partners(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    for (i, p) in perm.iter_mut().enumerate() {
        if *p == i && n > 1 {
            let j = rng.random_range(0..n - 1);
            *p = if j >= i { j + 1 } else { j };
        }
    }
    perm
}

/// One augmented sample per batch member, paired with its original.
///
/// Partners come from `rng`; each position's `λ` comes from its own substream
/// keyed by a batch key drawn from `rng`, so the output does not depend on
/// the execution policy.
pub fn augment_batch(
    batch: &[LabeledSample],
    policy: &MixupPolicy,
    sampler: &LambdaSampler,
    rng: &mut impl Rng,
    exec: Exec,
) -> Result<Vec<(LabeledSample, AugmentedSample)>> {
    if batch.len() < 2 {
        return Err(invalid(format!("augmentation needs a batch of at least 2, got {}", batch.len())));
    }
    for s in &batch[1..] {
        batch[0].image.check_same_shape(&s.image)?;
    }
    let partners = draw_partners(batch.len(), rng);
    let batch_key: u64 = rng.random();
    let spectra = exec.map(batch, |s| spectral_of_image(&s.image));
    let augmented = exec.map_range(batch.len(), |i| {
        let j = partners[i];
        let lambda = sampler.draw(&mut rng::stream(batch_key, &[tag::LAMBDA, i as u64]));
        augment_with_spectra(&batch[i], &spectra[i], &batch[j], &spectra[j], policy, lambda)
    });
    batch
        .iter()
        .cloned()
        .zip(augmented)
        .map(|(orig, aug)| Ok((orig, aug?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn example_pairs_classify() {
        assert_eq!(classify_pair(0, 2, 0, 2), PairRelation::IntraDomainIntraLabel);
        assert_eq!(classify_pair(0, 2, 1, 5), PairRelation::InterDomainInterLabel);
        assert_eq!(classify_pair(0, 2, 0, 5), PairRelation::IntraDomainInterLabel);
        assert_eq!(classify_pair(0, 2, 3, 2), PairRelation::InterDomainIntraLabel);
    }

    #[test]
    fn relation_names_parse() {
        for r in PairRelation::ALL {
            assert_eq!(r.name().parse::<PairRelation>().unwrap(), r);
            assert_eq!(r.name().replace('_', "-").parse::<PairRelation>().unwrap(), r);
        }
        assert!("sideways".parse::<PairRelation>().is_err());
    }

    #[test]
    fn classification_is_symmetric() {
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    for d in 0..4 {
                        assert_eq!(classify_pair(a, b, c, d), classify_pair(c, d, a, b));
                    }
                }
            }
        }
    }

    #[test]
    fn sam_policy_literal() {
        let expected = [
            (false, true, true),
            (false, true, true),
            (true, true, true),
            (true, false, false),
        ];
        let sam = MixupPolicy::sam();
        for (rel, (a, p, l)) in PairRelation::ALL.iter().zip(expected) {
            assert_eq!(sam.row(*rel), PolicyRow::new(a, p, l), "{rel}");
        }
        for rel in PairRelation::ALL {
            assert_eq!(MixupPolicy::fact().row(rel), PolicyRow::new(true, false, true));
        }
    }

    #[test]
    fn ablation_models_flip_one_cell_each() {
        let set = MixupPolicy::ablation_set();
        assert_eq!(set.len(), 9);
        let base = MixupPolicy::sam().grid();
        for (k, (name, policy)) in set.iter().enumerate().skip(1) {
            let diff: Vec<usize> = (0..8).filter(|&c| policy.grid()[c] != base[c]).collect();
            assert_eq!(diff, vec![k - 1], "{name}");
        }
        // Model D turns off phase for intra-domain inter-label pairs; nothing
        // semantic is mixed, so the label stays.
        assert!(!set[4].1.intra_domain_inter_label.label);
        // Model H mixes phase in the fourth case and therefore labels too.
        assert!(set[8].1.inter_domain_inter_label.label);
    }

    #[test]
    fn policy_rejects_unknown_keys() {
        let json = serde_json::to_string(&MixupPolicy::sam()).unwrap();
        let back: MixupPolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, MixupPolicy::sam());
        let bad = json.replacen("\"label\"", "\"labels\"", 1);
        assert!(serde_json::from_str::<MixupPolicy>(&bad).is_err());
    }

    #[test]
    fn amplitude_mixing_examples() {
        let a = ImagePlane::filled(3, 3, 2.0).unwrap();
        let b = ImagePlane::filled(3, 3, 4.0).unwrap();
        assert_eq!(mix_amplitude(&a, &b, 0.0).unwrap(), a);
        assert!(mix_amplitude(&a, &b, 0.5).unwrap().values().iter().all(|&v| v == 3.0));
        assert!(mix_amplitude(&a, &ImagePlane::zeros(3, 4).unwrap(), 0.5).is_err());
        assert!(mix_amplitude(&a, &b, 1.5).is_err());
    }

    #[test]
    fn phase_mixing_examples() {
        let a = ImagePlane::filled(2, 2, PI / 2.0).unwrap();
        let b = ImagePlane::filled(2, 2, -PI / 2.0).unwrap();
        assert_eq!(mix_phase(&a, &b, 0.0).unwrap(), a);
        assert!(mix_phase(&a, &b, 0.5).unwrap().values().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn label_mixing_examples() {
        let e = |k: usize| crate::data::one_hot(k, 5);
        assert_eq!(mix_label(&e(2), &e(2), 0.37, true).unwrap(), e(2));
        let m = mix_label(&e(0), &e(1), 0.2, true).unwrap();
        assert!((m[0] - 0.8).abs() < 1e-15 && (m[1] - 0.2).abs() < 1e-15);
        assert_eq!(mix_label(&e(0), &e(1), 0.9, false).unwrap(), e(0));
        assert!(mix_label(&e(0), &[0.0, 1.0], 0.5, true).is_err());
    }

    #[test]
    fn sampler_bounds() {
        let s = LambdaSampler::new(0.2).unwrap();
        let mut rng = rng::stream(3, &[]);
        assert!((0..10_000).all(|_| {
            let l = s.draw(&mut rng);
            (0.0..=0.2).contains(&l)
        }));
        assert_eq!(LambdaSampler::new(0.0).unwrap().draw(&mut rng), 0.0);
        assert!(LambdaSampler::new(1.2).is_err());
    }

    #[test]
    fn partners_have_no_fixed_points() {
        for n in 2..20 {
            for seed in 0..20 {
                let p = draw_partners(n, &mut rng::stream(seed, &[n as u64]));
                assert!(p.iter().enumerate().all(|(i, &j)| i != j && j < n));
            }
        }
    }
}
