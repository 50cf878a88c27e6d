"""Makes `import isda` work straight from a CMake build tree.

`pip install .` (scikit-build-core) places `_isda` inside the installed
package; for in-tree runs we copy the freshly built extension next to
python/isda/__init__.py instead.
"""

import glob
import os
import shutil
import sys

ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
PKG_DIR = os.path.join(ROOT, "python")


def _stage_extension():
    try:
        import isda  # noqa: F401  (already importable: installed wheel)
        return
    except ImportError:
        pass
    candidates = sorted(
        glob.glob(os.path.join(ROOT, "build*", "**", "_isda*.so"), recursive=True),
        key=os.path.getmtime,
    )
    if not candidates:
        raise RuntimeError(
            "no _isda extension found; build with "
            "`cmake -S . -B build -DISDA_BUILD_PYTHON=ON && cmake --build build`"
            " or `pip install .`"
        )
    target = os.path.join(PKG_DIR, "isda", os.path.basename(candidates[-1]))
    if not os.path.exists(target) or os.path.getmtime(candidates[-1]) > os.path.getmtime(target):
        shutil.copy2(candidates[-1], target)
    if PKG_DIR not in sys.path:
        sys.path.insert(0, PKG_DIR)


_stage_extension()
