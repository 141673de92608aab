from setuptools import setup

if __name__ == "__main__":
    setup(
        packages=["propssl"],
        keywords=[
            "semi-supervised learning",
            "class imbalance",
            "label proportions",
            "hypergeometric",
        ],
        install_requires=[
            "click",
            "coloredlogs",
            "numpy",
            "pandas",
            "scipy",  # gammaln, chi-square
            "jsonschema",
            "simplejson",
        ],
        name="wingechr-propssl",
        description="Proportion-loss regularized semi-supervised learning",
        long_description=None,
        long_description_content_type="text/markdown",
        version="0.1.0",
        author="Christian Winger",
        author_email="c@wingechr.de",
        url="https://github.com/wingechr/propssl",
        platforms=["any"],
        license="Public Domain",
        project_urls={"Bug Tracker": "https://github.com/wingechr/propssl"},
        classifiers=[
            "Programming Language :: Python :: 3",
            "License :: CC0 1.0 Universal (CC0 1.0) Public Domain Dedication",
            "Operating System :: OS Independent",
        ],
        entry_points={"console_scripts": ["propssl = propssl.__main__:main"]},
    )
