import json
from pathlib import Path
from typing import Callable, Dict

from utils.logger import logger
from utils.tools import CommandMiddleware, CommandRequest

MANIFEST_FILE = "manifest.json"

OPTIMIZER_NOTE = (
    "Adam (beta1=0.9, beta2=0.98, eps=1e-9) with inverse square root warmup is used in place of LAMB; "
    "LAMB targets large batches and the desk batch size is 32."
)


def _json_safe(value):
    if isinstance(value, dict):
        return {str(key): _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class RunManifestMiddleware(CommandMiddleware):
    """Writes manifest.json (command, seeds, config hash) beside the artifacts of a successful command."""

    def dispatch(self, request: CommandRequest, call_next: Callable[[CommandRequest], Dict]) -> Dict:
        result = call_next(request)
        if result.get("status") != "success" or "out_dir" not in result:
            return result

        config = request.config
        manifest = {
            "command": request.name,
            "seed": config.run.seed,
            "model_seed": config.run.seed,
            "config_sha256": config.config_hash(),
            "config": json.loads(config.canonical_text()),
            "params": _json_safe(request.params),
            "artifacts": sorted(result.get("artifacts", [])),
            "optimizer_note": OPTIMIZER_NOTE,
        }
        if "manifest" in result:
            manifest.update(_json_safe(result["manifest"]))

        path = Path(result["out_dir"]) / MANIFEST_FILE
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        logger.info(f"Wrote run manifest {path}")
        result["manifest_path"] = str(path)
        return result
