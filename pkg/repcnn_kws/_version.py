__version__ = "0.3.0"
""" RepCNN keyword spotter version """
