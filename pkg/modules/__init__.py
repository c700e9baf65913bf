"""Model, data and analysis modules for LatentForge"""
