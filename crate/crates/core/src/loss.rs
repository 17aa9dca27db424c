use crate::grid::Grid;

/// A scalar loss value and, when requested, its gradient with respect to
/// depth (meters). Supervisory targets inside the loss are held constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub value: f64,
    pub grad: Option<Grid<f64>>,
}

impl LossTerm {
    pub fn zero(width: usize, height: usize, want_grad: bool) -> Self {
        LossTerm {
            value: 0.0,
            grad: want_grad.then(|| Grid::filled(width, height, 0.0)),
        }
    }
}
