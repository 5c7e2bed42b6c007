"""Aerator working-state detection from fixed surveillance cameras.

Pipeline: find the object region from motion blobs, track reference-frame
corners into every frame, turn the displacement series into (Dist, EWMA)
points, label them with 2-means and classify with a linear SVM.
"""

__version__ = "0.1.0"
