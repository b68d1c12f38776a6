"""Few-shot misclassification detection with learned category and negative prompts."""

from ._core import *  # noqa: F401,F403
from ._core import __version__, cli  # noqa: F401
