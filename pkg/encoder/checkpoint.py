import json
import logging
import struct
from pathlib import Path

import numpy as np

from encoder.feature_encoder import network_from_dict
from encoder.training import ParamBundle
from ubmf_exceptions import FormatError

logger = logging.getLogger(__name__)

HEADER_LENGTH = struct.Struct("<I")
BLOB_DTYPE = "<f8"


def save_checkpoint(path: Path | str, bundle: ParamBundle, seed: int, step: int):
    """
    u32 header length, JSON header (architectures, shapes, seed, step), float64 LE blob

    The blob holds, per network in header order, its weights then its batch-norm state.
    """
    header = {
        "networks": {name: network.to_dict() for name, network in bundle.items()},
        "order": bundle.names(),
        "seed": int(seed),
        "step": int(step),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate(
        [
            np.concatenate([network.flat(), network.state_flat()])
            for network in bundle.values()
        ]
    ).astype(BLOB_DTYPE)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER_LENGTH.pack(len(header_bytes)))
        f.write(header_bytes)
        f.write(blob.tobytes())
    logger.debug("Checkpoint %s written (step %d)", path, step)


def load_checkpoint(path: Path | str) -> tuple[ParamBundle, dict]:
    """
    :return: the bundle and the header (with ``seed`` and ``step``)
    """
    data = Path(path).read_bytes()
    if len(data) < HEADER_LENGTH.size:
        raise FormatError("Truncated checkpoint header", offset=0, context=str(path))
    (header_length,) = HEADER_LENGTH.unpack_from(data, 0)
    header_end = HEADER_LENGTH.size + header_length
    if header_end > len(data):
        raise FormatError("Truncated checkpoint header", offset=len(data), context=str(path))
    try:
        header = json.loads(data[HEADER_LENGTH.size : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(
            "Malformed checkpoint header", offset=HEADER_LENGTH.size, context=str(path), parent=e
        )
    if (len(data) - header_end) % 8 != 0:
        raise FormatError("Blob is not a float64 array", offset=header_end, context=str(path))
    blob = np.frombuffer(data[header_end:], dtype=BLOB_DTYPE).astype(float)
    networks = {}
    offset = 0
    for name in header["order"]:
        spec = header["networks"][name]
        params = blob[offset : offset + spec["param_count"]]
        offset += spec["param_count"]
        state = blob[offset : offset + spec["state_count"]]
        offset += spec["state_count"]
        if params.size != spec["param_count"] or state.size != spec["state_count"]:
            raise FormatError(
                "Checkpoint blob shorter than its header", offset=header_end + 8 * offset
            )
        networks[name] = network_from_dict(spec, params, state)
    if offset != blob.size:
        raise FormatError(
            "Checkpoint blob longer than its header", offset=header_end + 8 * offset
        )
    return ParamBundle(networks), header
