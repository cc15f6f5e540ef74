use nalgebra::{DMatrix, SymmetricEigen};

use super::{SignalWindow, WindowKind, WindowLabel, AUGMENTED_ROWS};
use crate::spd::{matrix_inv_sqrt, SpdMatrix};
use crate::{Error, Result};

/// Spatial filters kept per class.
pub const XDAWN_COMPONENTS: usize = 3;

/// Ridge added to the pooled covariance, relative to its mean diagonal.
const POOLED_RIDGE: f64 = 1e-9;

/// Per-class spatial filters and prototypes. The `plus` class is
/// [`WindowLabel::Correct`], the `minus` class [`WindowLabel::Erroneous`].
#[derive(Debug, Clone, PartialEq)]
pub struct XdawnModel {
    pub w_plus: DMatrix<f64>,
    pub w_minus: DMatrix<f64>,
    pub p_plus: DMatrix<f64>,
    pub p_minus: DMatrix<f64>,
}

impl XdawnModel {
    pub fn n_channels(&self) -> usize {
        self.w_plus.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.p_plus.ncols()
    }
}

fn class_mean(windows: &[&SignalWindow]) -> DMatrix<f64> {
    let (r, c) = windows[0].data().shape();
    windows.iter().fold(DMatrix::zeros(r, c), |acc, w| acc + w.data()) / windows.len() as f64
}

fn centered_cov(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    &c * c.transpose() / x.ncols() as f64
}

/// Unit rows, first coefficient that is not negligible made positive.
fn normalize_filter(mut w: Vec<f64>) -> Vec<f64> {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    }
    let scale = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(first) = w.iter().find(|v| v.abs() > 1e-12 * scale) {
        if *first < 0.0 {
            w.iter_mut().for_each(|v| *v = -*v);
        }
    }
    w
}

/// Top generalized eigenvectors of `(P Pᵀ, Σ)` as filter rows.
fn class_filters(prototype: &DMatrix<f64>, whitener: &DMatrix<f64>) -> DMatrix<f64> {
    let n = whitener.nrows();
    let evoked = prototype * prototype.transpose() / prototype.ncols() as f64;
    let mut m = whitener * evoked * whitener;
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut filters = DMatrix::zeros(XDAWN_COMPONENTS, n);
    for (row, &k) in order.iter().take(XDAWN_COMPONENTS).enumerate() {
        let w = whitener * eig.eigenvectors.column(k);
        let w = normalize_filter(w.iter().copied().collect());
        for (c, v) in w.into_iter().enumerate() {
            filters[(row, c)] = v;
        }
    }
    filters
}

/// Fit per-class prototypes and three spatial filters per class from
/// labeled statement windows.
pub fn fit_xdawn(windows: &[SignalWindow]) -> Result<XdawnModel> {
    let plus: Vec<&SignalWindow> = windows
        .iter()
        .filter(|w| w.label() == Some(WindowLabel::Correct))
        .collect();
    let minus: Vec<&SignalWindow> = windows
        .iter()
        .filter(|w| w.label() == Some(WindowLabel::Erroneous))
        .collect();
    if plus.len() < 2 || minus.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "xDAWN needs at least 2 windows per class, got {} correct and {} erroneous",
            plus.len(),
            minus.len()
        )));
    }
    let shape = plus[0].data().shape();
    if plus
        .iter()
        .chain(minus.iter())
        .any(|w| w.data().shape() != shape || w.kind() != WindowKind::Statement)
    {
        return Err(Error::Input("xDAWN needs statement windows of equal shape".into()));
    }
    let n_ch = shape.0;
    if n_ch < XDAWN_COMPONENTS {
        return Err(Error::Input(format!(
            "xDAWN needs at least {XDAWN_COMPONENTS} channels, got {n_ch}"
        )));
    }

    let all: Vec<&SignalWindow> = plus.iter().chain(minus.iter()).copied().collect();
    let mut pooled = all
        .iter()
        .fold(DMatrix::zeros(n_ch, n_ch), |acc, w| acc + centered_cov(w.data()))
        / all.len() as f64;
    let ridge = POOLED_RIDGE * pooled.trace() / n_ch as f64;
    for i in 0..n_ch {
        pooled[(i, i)] += ridge;
    }
    let whitener = matrix_inv_sqrt(&SpdMatrix::new(pooled)?)?;

    let p_plus = class_mean(&plus);
    let p_minus = class_mean(&minus);
    Ok(XdawnModel {
        w_plus: class_filters(&p_plus, whitener.as_matrix()),
        w_minus: class_filters(&p_minus, whitener.as_matrix()),
        p_plus,
        p_minus,
    })
}

/// Stack `(W⁺P⁺, W⁻P⁻, W⁺X, W⁻X)` into a 12-row window.
pub fn augment_statement(w: &SignalWindow, m: &XdawnModel) -> Result<SignalWindow> {
    if w.kind() != WindowKind::Statement {
        return Err(Error::Input(format!("cannot augment a {:?} window", w.kind())));
    }
    if w.data().nrows() != m.n_channels() || w.data().ncols() != m.n_samples() {
        return Err(Error::Input(format!(
            "window is {}x{}, model expects {}x{}",
            w.data().nrows(),
            w.data().ncols(),
            m.n_channels(),
            m.n_samples()
        )));
    }
    let blocks = [
        &m.w_plus * &m.p_plus,
        &m.w_minus * &m.p_minus,
        &m.w_plus * w.data(),
        &m.w_minus * w.data(),
    ];
    let cols = m.n_samples();
    let mut data = DMatrix::zeros(AUGMENTED_ROWS, cols);
    for (b, block) in blocks.iter().enumerate() {
        data.rows_mut(b * XDAWN_COMPONENTS, XDAWN_COMPONENTS).copy_from(block);
    }
    let mut out = SignalWindow::new(WindowKind::StatementAugmented, data, w.rate(), w.comparison(), w.slot())?;
    out.set_label(w.label());
    Ok(out)
}
