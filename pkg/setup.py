from setuptools import find_packages, setup


DESCRIPTION="""
Multi-modal product recommendation from web sessions and call-center
conversations, with naturally missing modalities.
"""

setup(
    name="django-modalrec",
    description="Django app for multi-modal recommendation with missing modalities",
    long_description=DESCRIPTION,
    version="0.1.0",
    include_package_data=True,
    packages=find_packages(include=['modalrec', 'modalrec.*']),
    install_requires=[
        'django>=3.1,<5',
        'numpy>=1.20',
        'scipy>=1.6',
        'pandas>=1.2',
    ],
    entry_points={
        'console_scripts': [
            'modalrec = modalrec.cli:main',
        ],
    },
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Environment :: Console',
        'Framework :: Django',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: MIT License',
        'Programming Language :: Python :: 3',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ]
)
