"""
Run artifact management.

RunArtifacts owns every file a command writes under its output directory
(metrics, sweep tables, per-episode records, verification reports, the
resolved config and serialized networks). Writes are asynchronous through
aiofiles; formatting and parsing are plain functions so they can be tested
without touching disk.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import aiofiles
import numpy as np

from .config import RunConfig, dump_run_config
from .diffcore import MlpSpec, ParamStore, zero_mlp
from .envworld import Dataset, format_dataset
from .errors import ModelFormatError
from .shortcut import ShortcutPolicy
from .sorl import Critic, MetricsRow, TrainState
from .utils import ensure_directory, format_decimal, format_row

logger = logging.getLogger(__name__)

MODEL_HEADER = (
    "# sorl-model v1 obs_dim={obs_dim} action_dim={action_dim} m_disc={m_disc} env={env} "
    "aggregation={aggregation} policy_hidden={policy_hidden} critic_hidden={critic_hidden}"
)
_MODEL_HEADER_RE = re.compile(
    r"^# sorl-model v1 obs_dim=(\d+) action_dim=(\d+) m_disc=(\d+) env=(\S+) "
    r"aggregation=(mean|min) policy_hidden=([\d,]*) critic_hidden=([\d,]*)$"
)
_SECTION_RE = re.compile(r"^\[(policy|policy_target|critic|critic_target):(\S+)\]$")
NETWORKS = ("policy", "policy_target", "critic", "critic_target")


@dataclass
class ModelBundle:
    """Networks read back from a model file, plus the environment they were trained on."""

    env_name: str
    state: TrainState


def format_csv(columns: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    lines = [",".join(columns)]
    lines.extend(format_row(row) for row in rows)
    return "\n".join(lines) + "\n"


def _dims(values: Sequence[int]) -> str:
    return ",".join(str(v) for v in values)


def _parse_dims(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part)


def _stores(state: TrainState) -> dict[str, ParamStore]:
    return {
        "policy": state.policy.params,
        "policy_target": state.target_policy.params,
        "critic": state.critic.online,
        "critic_target": state.critic.target,
    }


def format_model(state: TrainState, env_name: str) -> str:
    """Text dump of all four networks; decimals round-trip exactly."""
    lines = [
        MODEL_HEADER.format(
            obs_dim=state.policy.obs_dim,
            action_dim=state.policy.action_dim,
            m_disc=state.policy.m_disc,
            env=env_name,
            aggregation=state.critic.aggregation,
            policy_hidden=_dims(state.policy.spec.hidden_dims),
            critic_hidden=_dims(state.critic.spec.hidden_dims),
        )
    ]
    for network, store in _stores(state).items():
        for name in store:
            data = store[name].data
            lines.append(f"[{network}:{name}]")
            lines.append(f"shape={_dims(data.shape)}")
            lines.append(",".join(format_decimal(v) for v in data.ravel().tolist()))
    return "\n".join(lines) + "\n"


def parse_model(text: str, source: str = "<string>") -> ModelBundle:
    lines = text.splitlines()
    if not lines:
        raise ModelFormatError(f"{source}: empty model file")
    header = _MODEL_HEADER_RE.match(lines[0])
    if header is None:
        raise ModelFormatError(f"{source}: malformed header {lines[0]!r}")
    obs_dim, action_dim, m_disc = int(header.group(1)), int(header.group(2)), int(header.group(3))
    env_name, aggregation = header.group(4), header.group(5)
    policy_spec = MlpSpec(action_dim + obs_dim + 2, action_dim, _parse_dims(header.group(6)))
    critic_spec = MlpSpec(obs_dim + action_dim + 1, 1, _parse_dims(header.group(7)), use_layer_norm=True)

    body = lines[1:]
    if len(body) % 3 != 0:
        raise ModelFormatError(f"{source}: truncated tensor section")
    arrays: dict[str, dict[str, np.ndarray]] = {network: {} for network in NETWORKS}
    for start in range(0, len(body), 3):
        section = _SECTION_RE.match(body[start])
        if section is None or not body[start + 1].startswith("shape="):
            raise ModelFormatError(f"{source}:{start + 2}: expected a [network:tensor] section")
        try:
            shape = _parse_dims(body[start + 1][len("shape=") :])
            values = np.array([float(v) for v in body[start + 2].split(",")], dtype=np.float64)
            arrays[section.group(1)][section.group(2)] = values.reshape(shape)
        except ValueError as e:
            raise ModelFormatError(f"{source}:{start + 2}: {e}") from e

    expected = {
        "policy": zero_mlp(policy_spec),
        "policy_target": zero_mlp(policy_spec),
        "critic": {**zero_mlp(critic_spec, "q0."), **zero_mlp(critic_spec, "q1.")},
        "critic_target": {**zero_mlp(critic_spec, "q0."), **zero_mlp(critic_spec, "q1.")},
    }
    for network, reference in expected.items():
        found = arrays[network]
        if set(found) != set(reference):
            raise ModelFormatError(f"{source}: {network} tensors do not match the header's architecture")
        for name, value in reference.items():
            if found[name].shape != value.shape:
                raise ModelFormatError(f"{source}: {network}:{name} has shape {found[name].shape}, expected {value.shape}")

    try:
        policy = ShortcutPolicy(ParamStore(arrays["policy"]), policy_spec, m_disc, action_dim, obs_dim)
        target_policy = ShortcutPolicy(
            ParamStore(arrays["policy_target"], trainable=False), policy_spec, m_disc, action_dim, obs_dim
        )
    except ValueError as e:
        raise ModelFormatError(f"{source}: {e}") from e
    critic = Critic(
        critic_spec,
        ParamStore(arrays["critic"]),
        ParamStore(arrays["critic_target"], trainable=False),
        obs_dim,
        action_dim,
        aggregation,  # type: ignore[arg-type]
    )
    return ModelBundle(env_name, TrainState(policy, target_policy, critic))


class RunArtifacts:
    """Asynchronous writer for the files of one run directory."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / "metrics.csv"

    @property
    def model_path(self) -> Path:
        return self.output_dir / "model.txt"

    @property
    def config_path(self) -> Path:
        return self.output_dir / "config.txt"

    async def write_text(self, path: Path, content: str) -> Path:
        """Write a file, creating its directory first."""
        path = Path(path)
        ensure_directory(path)
        async with aiofiles.open(path, "w", encoding="utf-8") as f:
            await f.write(content)
        logger.info(f"wrote {path}")
        return path

    async def read_text(self, path: Path) -> str:
        async with aiofiles.open(Path(path), "r", encoding="utf-8") as f:
            return await f.read()

    async def write_csv(self, path: Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
        return await self.write_text(path, format_csv(columns, rows))

    async def write_metrics(self, rows: Sequence[MetricsRow], path: Optional[Path] = None) -> Path:
        return await self.write_csv(path or self.metrics_path, MetricsRow.COLUMNS, [row.values() for row in rows])

    async def write_config(self, config: RunConfig) -> Path:
        return await self.write_text(self.config_path, dump_run_config(config))

    async def write_model(self, state: TrainState, env_name: str, path: Optional[Path] = None) -> Path:
        return await self.write_text(path or self.model_path, format_model(state, env_name))

    async def load_model(self, path: Path) -> ModelBundle:
        return parse_model(await self.read_text(path), source=str(path))

    async def write_dataset(self, dataset: Dataset, path: Path) -> Path:
        return await self.write_text(path, format_dataset(dataset))
