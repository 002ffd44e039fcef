"""Checkpoints: one .pmft file per named parameter plus a meta text file."""

from __future__ import annotations

from pathlib import Path

from .data import read_pmft, write_pmft
from .errors import DataError

META_NAME = "meta.txt"
CONFIG_NAME = "config.txt"


def save_checkpoint(model, directory, config_text: str, config_digest: str, step: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for path, tensor in model.named_parameters():
        write_pmft(tensor.data, directory / f"{path}.pmft")
    (directory / META_NAME).write_text(
        f"config_hash: {config_digest}\nstep: {step}\n", encoding="utf-8"
    )
    (directory / CONFIG_NAME).write_text(config_text, encoding="utf-8")


def read_meta(directory) -> dict:
    path = Path(directory) / META_NAME
    if not path.is_file():
        raise DataError(f"checkpoint meta file {path} does not exist")
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            meta[key.strip()] = value.strip()
    return meta


def read_config_text(directory) -> str:
    path = Path(directory) / CONFIG_NAME
    if not path.is_file():
        raise DataError(f"checkpoint config file {path} does not exist")
    return path.read_text(encoding="utf-8")


def load_checkpoint(model, directory) -> None:
    """Restore every parameter bit-exactly; unknown or missing files fail."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"checkpoint directory {directory} does not exist")
    expected = dict(model.named_parameters())
    seen = set()
    for path, tensor in expected.items():
        file = directory / f"{path}.pmft"
        if not file.is_file():
            raise DataError(f"checkpoint missing parameter file {path}.pmft")
        array = read_pmft(file)
        if array.shape != tensor.data.shape:
            raise DataError(
                f"checkpoint parameter {path} has shape {array.shape}, expected {tensor.data.shape}"
            )
        tensor.data = array.astype(tensor.data.dtype, copy=False).copy()
        seen.add(file.name)
    for file in directory.glob("*.pmft"):
        if file.name not in seen:
            raise DataError(f"checkpoint holds unknown parameter file {file.name}")
