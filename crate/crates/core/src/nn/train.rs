use rand::seq::SliceRandom;
use rand::Rng;

use super::mlp::{DropoutMask, Example, MlpModel};
use super::optim::Optimizer;
use crate::error::{ensure, Result};

/// One pass over `data` in shuffled minibatches of `batch_size`, with a
/// fresh dropout mask per example. Returns the mean of the batch losses.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut MlpModel,
    optimizer: &mut Optimizer,
    data: &[Example],
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    ensure!(batch_size >= 1, Config, "batch_size must be at least 1");
    ensure!(
        !data.is_empty(),
        InsufficientData,
        "training on an empty dataset"
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
        let masks: Option<Vec<DropoutMask>> = (model.dropout_rate() > 0.0).then(|| {
            batch
                .iter()
                .map(|_| model.sample_dropout_mask(rng))
                .collect()
        });
        let (grad, loss) = model.backward(&batch, masks.as_deref())?;
        optimizer.step(model.params_mut(), &grad)?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches as f64)
}
