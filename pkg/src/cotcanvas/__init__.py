"""cotcanvas: backend-pluggable chain-of-thought image editing.

Complex instruction -> atomic sub-prompts -> per-step region mask and
inpainting re-prompt -> mask-confined inpainting, plus the matching
data-preparation pipeline and evaluation harness. Every model call goes
through a swappable backend, so the whole system runs offline against
deterministic mocks.
"""

__version__ = "0.1.0"
