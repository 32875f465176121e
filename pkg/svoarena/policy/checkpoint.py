"""
Policy checkpoints and the checkpoint directory manifest.

A checkpoint file starts with a short text header::

    # svoarena checkpoint version 1
    # Header: {"architecture": {...}, "environment": "harvestpatch", ...}
    # SHA-256: 3f2a...
    # The rest of this file is a torch archive.

followed by the C{torch.save} archive of the network parameters and the
optimiser state. The hash covers the archive.
"""

import hashlib
import io
import json
from pathlib import Path
from typing import IO, Any, Callable, ContextManager, Dict, Optional, Tuple, Union

import torch

from svoarena.policy import PolicyHandle
from svoarena.policy.network import ArchitectureSpec
from svoarena.reporter import null_logger

FORMAT_VERSION = 1
MAGIC = b'# svoarena checkpoint version '
MANIFEST_NAME = 'manifest.json'


class CheckpointError(Exception):
    """
    Raised when a checkpoint cannot be read, is corrupt, or does not fit the
    environment it is loaded for.
    """


class CheckpointWriter:

    def __init__(self, logger: Callable[..., None] = null_logger):
        self._logger = logger

    def _openFileForWriting(self, path: Path) -> ContextManager[IO[bytes]]:
        """
        Helper for testing.
        """
        return open(path, 'wb')

    def write(self, path: Union[str, Path], policy: PolicyHandle,
              metadata: Optional[Dict[str, Any]] = None) -> str:
        """
        Write C{policy} to C{path}.

        @return: The SHA-256 of the archive.
        """
        path = Path(path)
        buffer = io.BytesIO()
        torch.save({
            'network': policy.network.state_dict(),
            'optimizer': (policy.optimizer.state_dict() if policy.optimizer is not None
                          else policy.pending_optimizer_state),
            }, buffer)
        payload = buffer.getvalue()
        digest = hashlib.sha256(payload).hexdigest()
        header = dict(metadata or {})
        header['architecture'] = policy.spec.to_json()
        header['dtype'] = str(policy.dtype).replace('torch.', '')
        with self._openFileForWriting(path) as target:
            target.write(MAGIC + b'%d\n' % FORMAT_VERSION)
            target.write(b'# Header: ' + json.dumps(header, sort_keys=True).encode('utf-8') + b'\n')
            target.write(b'# SHA-256: ' + digest.encode('ascii') + b'\n')
            target.write(b'# The rest of this file is a torch archive.\n')
            target.write(payload)
        self._logger('checkpoint', f'wrote {path}', thresh=2)
        return digest


def save_checkpoint(path: Union[str, Path], policy: PolicyHandle,
                    metadata: Optional[Dict[str, Any]] = None) -> str:
    return CheckpointWriter().write(path, policy, metadata)


def read_checkpoint_header(data: bytes, name: str) -> Tuple[Dict[str, Any], str, bytes]:
    """
    Split a checkpoint into header, recorded hash and archive.

    @raise CheckpointError: If the header is malformed or the version is
        not supported.
    """
    stream = io.BytesIO(data)
    first = stream.readline()
    if not first.startswith(MAGIC):
        raise CheckpointError(f"{name} is not an svoarena checkpoint")
    try:
        version = int(first[len(MAGIC):])
    except ValueError:
        raise CheckpointError(f"{name}: unreadable format version") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{name}: unsupported checkpoint version {version}")
    header_line = stream.readline()
    hash_line = stream.readline()
    stream.readline()
    if not header_line.startswith(b'# Header: ') or not hash_line.startswith(b'# SHA-256: '):
        raise CheckpointError(f"{name}: truncated checkpoint header")
    try:
        header = json.loads(header_line[len(b'# Header: '):])
    except ValueError as e:
        raise CheckpointError(f"{name}: corrupt checkpoint header: {e}") from e
    return header, hash_line[len(b'# SHA-256: '):].strip().decode('ascii'), stream.read()


def load_checkpoint(
        path: Union[str, Path],
        environment: Optional[str] = None,
        action_count: Optional[int] = None,
        ) -> Tuple[PolicyHandle, Dict[str, Any]]:
    """
    Load a policy.

    @param environment: If given, the environment the policy must have been
        trained in.
    @param action_count: If given, the action count the policy must have.
    @return: The policy, with its optimiser state restored on the next
        update, and the checkpoint header.
    @raise CheckpointError: If the file is unreadable, corrupt, or does not
        match C{environment} or C{action_count}.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror}") from e
    header, recorded, payload = read_checkpoint_header(data, str(path))
    if hashlib.sha256(payload).hexdigest() != recorded:
        raise CheckpointError(f"{path}: content hash mismatch")
    spec = ArchitectureSpec.fromJson(header['architecture'])
    if environment is not None and header.get('environment', environment) != environment:
        raise CheckpointError(
            f"{path} was trained in {header['environment']}, not {environment}")
    if action_count is not None and spec.action_count != action_count:
        raise CheckpointError(
            f"{path} has {spec.action_count} actions, the environment has {action_count}")
    state = torch.load(io.BytesIO(payload), map_location='cpu', weights_only=True)
    policy = PolicyHandle(spec, dtype=getattr(torch, header.get('dtype', 'float32')))
    policy.network.load_state_dict(state['network'])
    policy.pending_optimizer_state = state['optimizer']
    return policy, header


def write_manifest(directory: Union[str, Path], manifest: Dict[str, Any]) -> Path:
    """Write C{manifest.json} into a checkpoint directory."""
    path = Path(directory) / MANIFEST_NAME
    data = dict(manifest, format_version=FORMAT_VERSION)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + '\n', encoding='utf-8')
    return path


def read_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    """
    @raise CheckpointError: If the manifest is missing or unreadable.
    """
    path = Path(directory) / MANIFEST_NAME
    try:
        data: Dict[str, Any] = json.loads(path.read_text(encoding='utf-8'))
    except OSError as e:
        raise CheckpointError(f"cannot read manifest {path}: {e.strerror}") from e
    except ValueError as e:
        raise CheckpointError(f"corrupt manifest {path}: {e}") from e
    if data.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported manifest version {data.get('format_version')}")
    return data
