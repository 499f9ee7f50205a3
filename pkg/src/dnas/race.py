"""Backend selection for the block-race kernel.

The compiled extension is used when it was built; otherwise the numpy
implementation. Set ``DNAS_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _race_py

if os.environ.get("DNAS_PURE_PYTHON"):
    _compiled = None
else:
    try:
        from . import _race as _compiled  # type: ignore[attr-defined]
    except ImportError:
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
race_successes = _compiled.race_successes if _compiled is not None else _race_py.race_successes


def backends() -> dict[str, object]:
    out: dict[str, object] = {"python": _race_py.race_successes}
    if _compiled is not None:
        out["compiled"] = _compiled.race_successes
    return out
