"""ECG myocardial-infarction detection from rendered Lead II beat images.

Two classifiers share one convolutional backbone: ``MI1`` trains the network
end to end with a two-way softmax head, ``MI2`` reuses the second
fully-connected layer as a feature extractor for a Q-Gaussian kernel SVM.
"""

__version__ = "0.1.0"

NORMAL = "Normal"
MI = "MI"
OTHER = "Other"

# class indices used by the network and the evaluation harness
CLASS_INDEX = {NORMAL: 0, MI: 1}
CLASS_NAMES = (NORMAL, MI)
