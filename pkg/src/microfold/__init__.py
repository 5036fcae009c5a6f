"""microfold: a desk-scale purely functional package manager.

Every build is a pure function over content-addressed inputs; environments
are declared in manifests, pinned to channel revisions, and reproducible
bit-for-bit across machines and time.
"""

__version__ = "0.1.0"
