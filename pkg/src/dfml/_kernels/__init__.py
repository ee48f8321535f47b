"""Kernel backend selection: the compiled extension when available, the
numpy implementation otherwise.  DFML_KERNEL=python forces the fallback."""

import os

from . import _patch_np


def _load_default():
    if os.environ.get('DFML_KERNEL', '').lower() == 'python':
        return _patch_np
    try:
        from . import _patch_cy
        return _patch_cy
    except ImportError:
        return _patch_np


def get_backend(name):
    """Backend module by name ('cython' or 'python'); used by the kernel
    benchmark and the cross-backend tests."""
    if name == 'python':
        return _patch_np
    if name == 'cython':
        from . import _patch_cy
        return _patch_cy
    raise ValueError('unknown kernel backend %r' % name)


_impl = _load_default()
BACKEND_NAME = _impl.BACKEND_NAME
solve_patch_batch = _impl.solve_patch_batch
