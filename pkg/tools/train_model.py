from pathlib import Path
from typing import Dict, Literal, Optional

from pydantic import Field
from typing_extensions import Annotated

from services.bundle import train_and_save
from utils.tools import doc_name, doc_tag


@doc_tag("Training")
@doc_name("Train")
def cmd_train(
    config,
    head: Annotated[Optional[Literal["softmax", "scones"]], Field(description="Overrides loss.head.")] = None,
    alpha: Annotated[Optional[float], Field(gt=0.0, description="Overrides loss.alpha.")] = None,
    smoothing: Annotated[Optional[float], Field(ge=0.0, le=1.0, description="Overrides loss.lambda.")] = None,
    data_dir: Annotated[Optional[str], Field(description="Overrides data.data_dir.")] = None,
    out_dir: Annotated[Optional[str], Field(description="Output directory; defaults to run.out_dir.")] = None,
) -> Dict:
    """
    Trains one model and keeps the checkpoint with the best dev greedy BLEU

    Writes `best.ckpt`, `last.ckpt`, both vocabularies and `train_log.csv`
    (the loss settings are repeated in its first line).

    Args:
    - head (str): softmax or scones.
    - alpha (float): Weight of the SCONES negative component.
    - smoothing (float): SCONES label smoothing lambda.
    - data_dir (str): Directory with train/dev `.src`/`.tgt` files.
    - out_dir (str): Output directory.

    Returns:
        - dict: Status, best step and dev BLEU, final training loss.
    """
    config = config.with_overrides("loss", head=head, alpha=alpha, **{"lambda": smoothing})
    config = config.with_overrides("data", data_dir=data_dir)
    out = Path(out_dir or config.run.out_dir)

    result, best_path = train_and_save(config, config.loss, out)
    return {
        "status": "success",
        "message": f"Trained {config.loss.describe()} for {result.last.step} steps.",
        "out_dir": str(out),
        "checkpoint": str(best_path),
        "best_step": result.best.step,
        "best_dev_bleu": result.best_dev_bleu,
        "final_train_loss": result.final_train_loss,
        "stopped_early": result.stopped_early,
        "artifacts": ["best.ckpt", "last.ckpt", "source.vocab", "target.vocab", "train_log.csv"],
    }
