"""Policy-gradient gain tuning against sub-synchronous control interactions.

Subpackages: sigproc (signal conditioning + oscillation energy), plant
(surrogate resonant grid model), policy (Gaussian MLP with hand-derived
gradients), trainer (episodic policy-gradient loop with gain-bucket
caching), envproto (socket protocol for external simulators), cli.
"""

from .kernel import USING_COMPILED

__version__ = "0.1.0"
__all__ = ["USING_COMPILED", "__version__"]
